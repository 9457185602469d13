//! Training by alternating imputation and ascent on the composite objective
//!
//! ```text
//! L_mo(y_obs; K_t) + F̃(q) − KL(q ‖ p)
//! ```
//!
//! where `L_mo` is the multi-output sampler's likelihood of the observed
//! entries and `F̃` the collapsed data term on the completed matrix. Each
//! outer iteration refreshes the missing entries from the sampler, then takes
//! a block of gradient steps with the imputed values held fixed (no gradient
//! flows through the draw).
//!
//! Outputs are centred and scaled per dimension and time is mapped onto
//! [0, 1] before any of this; predictions are returned in data units.

mod config;
mod optimizer;
pub mod persist;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bound::{bound_gradients, collapsed_bound, InducingSet, NoisePrecision};
use crate::data_eval::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::kernels::{inducing_covariance, KernelFamily, KernelSpec};
use crate::multioutput::{
    draw_samples, lmc_log_likelihood, lmc_log_likelihood_gradients, lmc_posterior, sparse_conv_log_likelihood,
    sparse_conv_log_likelihood_gradients, sparse_conv_posterior, ConvParams, DrawMode, LmcParams, Observation,
    ObservationSet, Target,
};
use crate::numerics::{chol_default, chol_with_jitter, frob_inner, symmetrize};
use crate::psi_stats::{psi1, psi2, psi2_per_point};
use crate::variational::{latent_predictive, posterior_moments, DynamicalPrior, VariationalPosterior};

pub use config::{ImputeMode, OptimizerKind, SamplerKind, TrainConfig};

/// `y = (x − offset) / scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMap {
    pub offset: f64,
    pub scale: f64,
}

impl AffineMap {
    pub fn forward(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    pub fn inverse(&self, y: f64) -> f64 {
        self.offset + self.scale * y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SamplerParams {
    Lmc(LmcParams),
    Conv(ConvParams),
    Disabled,
}

/// Everything a trained model needs. The dynamical kernel lives only in
/// `prior`; the samplers read it from there.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: TrainConfig,
    pub posterior: VariationalPosterior,
    pub prior: DynamicalPrior,
    pub inducing: InducingSet,
    pub mapping_kernel: KernelSpec,
    pub noise: NoisePrecision,
    pub sampler: SamplerParams,
    /// Data-unit values for the retained dimensions: observed cells hold the
    /// dataset values untouched, missing cells the current imputation.
    pub imputed: DMatrix<f64>,
    pub mask: DMatrix<bool>,
    pub times: Vec<f64>,
    pub time_scaler: AffineMap,
    pub output_scalers: Vec<AffineMap>,
    pub kept_dims: Vec<usize>,
    pub dim_names: Vec<String>,
    /// Per original dimension: the constant reported for dropped ones.
    pub dropped_fill: Vec<Option<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveTerms {
    pub total: f64,
    pub l_mo: f64,
    pub f_tilde: f64,
    pub kl: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub total: f64,
    pub l_mo: f64,
    pub f_tilde: f64,
    pub kl: f64,
    pub impute_rms_change: f64,
}

/// Objective value after every accepted step; `step` 0 is the value at the
/// start of the block, right after imputation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub step: usize,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub iterations: Vec<IterationRecord>,
    pub steps: Vec<StepRecord>,
    pub dropped_dims: Vec<usize>,
    pub converged: bool,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,total,l_mo,f_tilde,kl,impute_rms_change\n");
        for r in &self.iterations {
            s.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:?}\n",
                r.iteration, r.total, r.l_mo, r.f_tilde, r.kl, r.impute_rms_change
            ));
        }
        s
    }

    /// Largest drop between consecutive accepted steps within a block.
    pub fn max_within_block_decrease(&self) -> f64 {
        self.steps
            .windows(2)
            .filter(|w| w[0].iteration == w[1].iteration)
            .map(|w| w[0].total - w[1].total)
            .fold(0.0, f64::max)
    }
}

/// A failed fit, with the trace up to the failure.
#[derive(Debug)]
pub struct FitFailure {
    pub error: Error,
    pub trace: TrainTrace,
}

impl From<FitFailure> for Error {
    fn from(f: FitFailure) -> Self {
        f.error
    }
}

impl std::fmt::Display for FitFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl ModelState {
    pub fn latent_dim(&self) -> usize {
        self.posterior.latent_dim()
    }

    pub fn n_points(&self) -> usize {
        self.times.len()
    }

    pub fn n_kept(&self) -> usize {
        self.kept_dims.len()
    }

    /// Completed matrix in standardized units.
    pub fn scaled_imputed(&self) -> DMatrix<f64> {
        let mut y = self.imputed.clone();
        for (j, sc) in self.output_scalers.iter().enumerate() {
            y.column_mut(j).apply(|v| *v = sc.forward(*v));
        }
        y
    }

    /// Observed entries in standardized units on rescaled time.
    pub fn observation_set(&self) -> Result<ObservationSet> {
        let t = self.prior.times();
        let mut entries = Vec::new();
        for i in 0..self.n_points() {
            for j in 0..self.n_kept() {
                if self.mask[(i, j)] {
                    entries.push(Observation {
                        time: t[(i, 0)],
                        dim: j,
                        value: self.output_scalers[j].forward(self.imputed[(i, j)]),
                    });
                }
            }
        }
        ObservationSet::new(entries, self.n_kept())
    }

    fn missing_targets(&self) -> (Vec<(usize, usize)>, Vec<Target>) {
        let t = self.prior.times();
        let mut cells = Vec::new();
        let mut targets = Vec::new();
        for i in 0..self.n_points() {
            for j in 0..self.n_kept() {
                if !self.mask[(i, j)] {
                    cells.push((i, j));
                    targets.push((t[(i, 0)], j));
                }
            }
        }
        (cells, targets)
    }

    /// All free parameters, flattened.
    pub fn parameters(&self) -> Vec<f64> {
        let mut x: Vec<f64> = self.posterior.mu_bar.iter().copied().collect();
        x.extend(self.posterior.log_lambda.iter());
        x.extend(self.inducing.z.iter());
        x.extend(self.mapping_kernel.log_params());
        x.extend(self.prior.kernel().log_params());
        x.extend(self.noise.log_values());
        match &self.sampler {
            SamplerParams::Lmc(p) => {
                if !self.config.freeze_task_covariance {
                    x.extend(p.phi.iter());
                }
                x.extend(p.log_task_noise.iter());
            }
            SamplerParams::Conv(p) => {
                x.extend(p.smoothing_gains.iter());
                x.extend(p.log_smoothing_scales.iter());
                x.extend(p.log_task_noise.iter());
            }
            SamplerParams::Disabled => {}
        }
        x
    }

    pub fn set_parameters(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.parameters().len() {
            return Err(Error::DimensionMismatch(format!("{} parameters given", x.len())));
        }
        let mut off = 0;
        let mut take = |k: usize| {
            let s = &x[off..off + k];
            off += k;
            s
        };
        let (q, n) = self.posterior.mu_bar.shape();
        self.posterior.mu_bar.copy_from_slice(take(q * n));
        self.posterior.log_lambda.copy_from_slice(take(q * n));
        let zn = self.inducing.z.len();
        self.inducing.z.copy_from_slice(take(zn));
        let nm = self.mapping_kernel.n_params();
        self.mapping_kernel.set_log_params(take(nm))?;
        let nt = self.prior.kernel().n_params();
        self.prior.set_kernel_log_params(take(nt))?;
        let nb = self.noise.log_values().len();
        self.noise.set_log_values(take(nb))?;
        let freeze = self.config.freeze_task_covariance;
        match &mut self.sampler {
            SamplerParams::Lmc(p) => {
                if !freeze {
                    let k = p.phi.len();
                    p.phi.copy_from_slice(take(k));
                }
                let k = p.log_task_noise.len();
                p.log_task_noise.copy_from_slice(take(k));
            }
            SamplerParams::Conv(p) => {
                let d = p.smoothing_gains.len();
                p.smoothing_gains.copy_from_slice(take(d));
                p.log_smoothing_scales.copy_from_slice(take(d));
                p.log_task_noise.copy_from_slice(take(d));
            }
            SamplerParams::Disabled => {}
        }
        Ok(())
    }
}

/// Sets up the state: scaling, mean imputation, PCA latent means.
pub fn initialize(data: &LongitudinalDataset, cfg: &TrainConfig) -> Result<ModelState> {
    initialize_with_trace(data, cfg).map(|(s, _)| s)
}

fn initialize_with_trace(data: &LongitudinalDataset, cfg: &TrainConfig) -> Result<(ModelState, Vec<usize>)> {
    cfg.validate()?;
    let n = data.n_points();
    if n < 2 {
        return Err(Error::InsufficientData("need at least two time points".into()));
    }
    if data.times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::DegenerateTime("duplicate or unsorted timestamps".into()));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut dropped_fill = vec![None; data.n_dims()];
    for d in 0..data.n_dims() {
        let c = data.observed_in_dim(d);
        if c >= 2 {
            kept.push(d);
        } else {
            warn!("dropping dimension {} ({} observation(s))", data.dim_names[d], c);
            dropped.push(d);
            dropped_fill[d] = Some(
                (0..n)
                    .find(|&i| data.mask[(i, d)])
                    .map_or(f64::NAN, |i| data.values[(i, d)]),
            );
        }
    }
    if kept.is_empty() {
        return Err(Error::InsufficientData("no dimension has two observations".into()));
    }
    let dk = kept.len();
    let time_scaler = AffineMap {
        offset: data.times[0],
        scale: data.times[n - 1] - data.times[0],
    };
    let ts: Vec<f64> = data.times.iter().map(|&t| time_scaler.forward(t)).collect();

    let mut mask = DMatrix::from_element(n, dk, false);
    let mut imputed = DMatrix::zeros(n, dk);
    let mut scalers = Vec::with_capacity(dk);
    for (j, &d) in kept.iter().enumerate() {
        let obs: Vec<f64> = (0..n).filter(|&i| data.mask[(i, d)]).map(|i| data.values[(i, d)]).collect();
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let var = obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / obs.len() as f64;
        let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        scalers.push(AffineMap { offset: mean, scale: sd });
        for i in 0..n {
            if data.mask[(i, d)] {
                mask[(i, j)] = true;
                imputed[(i, j)] = data.values[(i, d)];
            } else {
                imputed[(i, j)] = mean;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let qd = cfg.latent_dim;
    let mut y = imputed.clone();
    for (j, sc) in scalers.iter().enumerate() {
        y.column_mut(j).apply(|v| *v = sc.forward(*v));
    }
    let x0 = pca_init(&y, qd, &mut rng);

    let dyn_kernel = match cfg.dynamical_family {
        KernelFamily::Periodic => {
            let p = cfg.dynamical_period.expect("validated") / time_scaler.scale;
            KernelSpec::periodic(1.0, 1.0, p)?
        }
        _ => KernelSpec::rbf_ard(1.0, &[cfg.dynamical_lengthscale])?,
    };
    let prior = DynamicalPrior::new(&ts, dyn_kernel)?;
    // K_t μ̄ = x0, regularized
    let mut kreg = prior.k_t().clone();
    for i in 0..n {
        kreg[(i, i)] += 1e-2;
    }
    let kf = chol_default(&symmetrize(&kreg))?;
    let mu_bar = kf.solve(&x0).transpose();
    let posterior = VariationalPosterior::new(mu_bar, &DMatrix::from_element(qd, n, 1.0))?;
    let means = prior.k_t() * posterior.mu_bar.transpose();

    let m = cfg.inducing_count;
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    let z = DMatrix::from_fn(m, qd, |r, q| {
        let base = means[(rows[r % n], q)];
        if r < n {
            base
        } else {
            base + 0.05 * { let v: f64 = StandardNormal.sample(&mut rng); v }
        }
    });
    let inducing = InducingSet::new(z)?;
    let mapping_kernel = KernelSpec::rbf_ard(1.0, &vec![1.0; qd])?;
    let noise = if cfg.shared_noise {
        NoisePrecision::shared(cfg.init_beta)?
    } else {
        NoisePrecision::per_dimension(&vec![cfg.init_beta; dk])?
    };
    let grid = |k: usize| -> Vec<f64> { (0..k).map(|i| i as f64 / (k - 1).max(1) as f64).collect() };
    let sampler = match cfg.sampler {
        SamplerKind::Lmc => {
            let p = LmcParams::identity(dk, 0.1)?;
            if cfg.sampler_inducing > 0 {
                SamplerParams::Lmc(p.with_inducing_times(&grid(cfg.sampler_inducing.max(2)))?)
            } else {
                SamplerParams::Lmc(p)
            }
        }
        SamplerKind::Conv => SamplerParams::Conv(ConvParams::new(
            &vec![1.0; dk],
            &vec![0.02; dk],
            &grid(cfg.sampler_inducing),
            &vec![0.1; dk],
            0.0,
        )?),
        SamplerKind::Disabled => SamplerParams::Disabled,
    };
    Ok((
        ModelState {
            config: cfg.clone(),
            posterior,
            prior,
            inducing,
            mapping_kernel,
            noise,
            sampler,
            imputed,
            mask,
            times: data.times.clone(),
            time_scaler,
            output_scalers: scalers,
            kept_dims: kept,
            dim_names: data.dim_names.clone(),
            dropped_fill,
        },
        dropped,
    ))
}

/// Top principal components of `y`, all scaled by the one factor that gives
/// the leading component unit standard deviation, so their relative spread
/// is kept. Components beyond the data's rank are small seeded noise.
fn pca_init(y: &DMatrix<f64>, q: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, d) = y.shape();
    let mut yc = y.clone();
    for j in 0..d {
        let m = yc.column(j).mean();
        yc.column_mut(j).add_scalar_mut(-m);
    }
    let svd = yc.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = svd.singular_values.max();
    let mut x = DMatrix::zeros(n, q);
    let mut lead_sd = None;
    for k in 0..q {
        let usable = k < order.len() && svd.singular_values[order[k]] > 1e-8 * smax.max(1e-300);
        if usable {
            let v = vt.row(order[k]).transpose();
            let col = &yc * v;
            let sd = *lead_sd.get_or_insert((col.norm_squared() / n as f64).sqrt());
            x.set_column(k, &(col / sd));
        } else {
            for i in 0..n {
                let e: f64 = StandardNormal.sample(rng);
                x[(i, k)] = 0.1 * e;
            }
        }
    }
    x
}

fn sampler_value(state: &ModelState, obs: &ObservationSet) -> Result<f64> {
    let k = state.prior.kernel();
    match &state.sampler {
        SamplerParams::Lmc(p) => lmc_log_likelihood(obs, p, k),
        SamplerParams::Conv(p) => sparse_conv_log_likelihood(obs, p, k),
        SamplerParams::Disabled => Ok(0.0),
    }
}

/// `(total, l_mo, f_tilde, kl)` at the current imputation.
pub fn composite_objective(state: &ModelState) -> Result<ObjectiveTerms> {
    let y = state.scaled_imputed();
    let b = collapsed_bound(&y, &state.posterior, &state.prior, &state.inducing, &state.mapping_kernel, &state.noise)?;
    let l_mo = match state.sampler {
        SamplerParams::Disabled => 0.0,
        _ => sampler_value(state, &state.observation_set()?)?,
    };
    Ok(ObjectiveTerms {
        total: l_mo + b.data_term - b.kl_term,
        l_mo,
        f_tilde: b.data_term,
        kl: b.kl_term,
    })
}

/// Objective and its gradient with respect to [`ModelState::parameters`],
/// imputed values held fixed.
pub fn composite_gradient(state: &ModelState) -> Result<(ObjectiveTerms, Vec<f64>)> {
    let y = state.scaled_imputed();
    let (b, g) = bound_gradients(&y, &state.posterior, &state.prior, &state.inducing, &state.mapping_kernel, &state.noise)?;
    let mut log_dyn = g.log_dynamical.clone();
    let mut tail: Vec<f64> = Vec::new();
    let mut l_mo = 0.0;
    let kernel = state.prior.kernel();
    match &state.sampler {
        SamplerParams::Lmc(p) => {
            let sg = lmc_log_likelihood_gradients(&state.observation_set()?, p, kernel)?;
            l_mo = sg.value;
            for (a, b) in log_dyn.iter_mut().zip(&sg.log_kernel) {
                *a += b;
            }
            if !state.config.freeze_task_covariance {
                tail.extend(sg.phi.iter());
            }
            tail.extend(sg.log_task_noise.iter());
        }
        SamplerParams::Conv(p) => {
            let sg = sparse_conv_log_likelihood_gradients(&state.observation_set()?, p, kernel)?;
            l_mo = sg.value;
            for (a, b) in log_dyn.iter_mut().zip(&sg.log_kernel) {
                *a += b;
            }
            tail.extend(sg.gains.iter());
            tail.extend(sg.log_smoothing_scales.iter());
            tail.extend(sg.log_task_noise.iter());
        }
        SamplerParams::Disabled => {}
    }
    let mut grad: Vec<f64> = g.mu_bar.iter().copied().collect();
    grad.extend(g.log_lambda.iter());
    grad.extend(g.inducing.iter());
    grad.extend(&g.log_mapping);
    grad.extend(&log_dyn);
    grad.extend(&g.log_beta);
    grad.extend(tail);
    Ok((
        ObjectiveTerms {
            total: l_mo + b.data_term - b.kl_term,
            l_mo,
            f_tilde: b.data_term,
            kl: b.kl_term,
        },
        grad,
    ))
}

/// Redraws the missing cells from the sampler; returns the RMS change in
/// data units.
fn impute(state: &mut ModelState, draw: DrawMode, iteration: usize) -> Result<f64> {
    let (cells, targets) = state.missing_targets();
    if cells.is_empty() || state.sampler == SamplerParams::Disabled {
        return Ok(0.0);
    }
    let obs = state.observation_set()?;
    let kernel = state.prior.kernel();
    let mode = state.config.covariance_mode;
    let dist = match &state.sampler {
        SamplerParams::Lmc(p) => lmc_posterior(&obs, p, kernel, &targets, mode)?,
        SamplerParams::Conv(p) => sparse_conv_posterior(&obs, p, kernel, &targets, mode)?,
        SamplerParams::Disabled => unreachable!(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(state.config.seed);
    rng.set_stream(iteration as u64 + 1);
    let v = draw_samples(&dist, draw, &mut rng)?;
    let mut sq = 0.0;
    for (k, &(i, j)) in cells.iter().enumerate() {
        let new = state.output_scalers[j].inverse(v[k]);
        if !new.is_finite() {
            return Err(Error::NonFiniteEvaluation { index: k });
        }
        sq += (new - state.imputed[(i, j)]).powi(2);
        state.imputed[(i, j)] = new;
    }
    Ok((sq / cells.len() as f64).sqrt())
}

/// Trains from scratch.
pub fn fit(data: &LongitudinalDataset, cfg: &TrainConfig) -> std::result::Result<(ModelState, TrainTrace), FitFailure> {
    let mut trace = TrainTrace::default();
    let (mut state, dropped) = match initialize_with_trace(data, cfg) {
        Ok(s) => s,
        Err(error) => return Err(FitFailure { error, trace }),
    };
    trace.dropped_dims = dropped;
    let mut opt = optimizer::Optimizer::new(cfg.optimizer, cfg.step_size);
    let draw = match cfg.impute_mode {
        ImputeMode::Mean => DrawMode::Mean,
        ImputeMode::Sample => DrawMode::Sample,
    };
    let mut previous: Option<f64> = None;
    let mut small = 0;
    for it in 0..cfg.max_outer {
        let step = (|| -> Result<IterationRecord> {
            let change = if it % cfg.resample_every == 0 {
                impute(&mut state, draw, it)?
            } else {
                0.0
            };
            let terms = opt.run_block(&mut state, cfg.inner_steps, it, &mut trace.steps)?;
            Ok(IterationRecord {
                iteration: it,
                total: terms.total,
                l_mo: terms.l_mo,
                f_tilde: terms.f_tilde,
                kl: terms.kl,
                impute_rms_change: change,
            })
        })();
        let rec = match step {
            Ok(r) => r,
            Err(e) => {
                return Err(FitFailure {
                    error: e.at_iteration(it),
                    trace,
                })
            }
        };
        debug!(
            "iteration {it}: total {:.4} (l_mo {:.4}, f {:.4}, kl {:.4}), imputation change {:.4}",
            rec.total, rec.l_mo, rec.f_tilde, rec.kl, rec.impute_rms_change
        );
        trace.iterations.push(rec);
        if cfg.impute_mode == ImputeMode::Mean {
            if let Some(p) = previous {
                if rec.total - p < cfg.convergence_tol {
                    small += 1;
                } else {
                    small = 0;
                }
            }
            previous = Some(rec.total);
            if small >= 3 {
                trace.converged = true;
                break;
            }
        }
    }
    Ok((state, trace))
}

/// Per-dimension predictive mean and variance (data units) at new times,
/// using time as the only input. Variances include the observation noise
/// `1/β`. Dropped dimensions get their single observed value (or NaN) and a
/// NaN variance.
pub fn predict(state: &ModelState, times: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ns = times.len();
    let d_total = state.dim_names.len();
    let ts: Vec<f64> = times.iter().map(|&t| state.time_scaler.forward(t)).collect();
    let qstar = latent_predictive(&state.posterior, &state.prior, &ts)?;
    let k = &state.mapping_kernel;
    let z = &state.inducing.z;
    let m = z.nrows();

    let moments = posterior_moments(&state.posterior, &state.prior)?;
    let marg = moments.marginals();
    let p1 = psi1(&marg, k, z)?;
    let p2 = psi2(&marg, k, z)?;
    let kmm = inducing_covariance(k, z)?;
    let kmm_f = chol_default(&kmm)?;
    let kmm_inv = kmm_f.inverse();
    let kmm_j = &kmm + DMatrix::identity(m, m) * kmm_f.jitter_applied();
    let y = state.scaled_imputed();

    let p1s = psi1(&qstar, k, z)?;
    let p2s = psi2_per_point(&qstar, k, z)?;
    let psi0 = k.variance();

    let mut mean = DMatrix::from_element(ns, d_total, f64::NAN);
    let mut var = DMatrix::from_element(ns, d_total, f64::NAN);
    for (d, fill) in state.dropped_fill.iter().enumerate() {
        if let Some(v) = fill {
            mean.column_mut(d).fill(*v);
        }
    }
    let mut cache: Option<(f64, DMatrix<f64>)> = None;
    for (j, &d) in state.kept_dims.iter().enumerate() {
        let beta = state.noise.beta(j);
        if cache.as_ref().is_none_or(|(b, _)| *b != beta) {
            let a = symmetrize(&(&kmm_j + &p2 * beta));
            cache = Some((beta, chol_with_jitter(&a, 0.0).or_else(|_| chol_default(&a))?.inverse()));
        }
        let a_inv = &cache.as_ref().unwrap().1;
        let w: DVector<f64> = a_inv * (p1.transpose() * y.column(j)) * beta;
        let diff = &kmm_inv - a_inv;
        let sc = state.output_scalers[j];
        for i in 0..ns {
            let mu = (p1s.row(i) * &w)[0];
            let s2 = &p2s[i];
            let v = psi0 - frob_inner(&diff, s2) + w.dot(&(s2 * &w)) - mu * mu + 1.0 / beta;
            mean[(i, d)] = sc.inverse(mu);
            var[(i, d)] = v.max(0.0) * sc.scale * sc.scale;
        }
    }
    Ok((mean, var))
}

/// Normalized inverse squared mapping lengthscales (max 1).
pub fn ard_relevances(state: &ModelState) -> Vec<f64> {
    state.mapping_kernel.relevances()
}
