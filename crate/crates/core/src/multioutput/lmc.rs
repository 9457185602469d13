//! Linear model of coregionalization over heterotopic observations.
//!
//! `cov[f_d(t), f_e(t')] = K_f[d,e] k_t(t,t')` with `K_f = ΦΦᵀ`, plus
//! per-task noise on the observed entries. Only observed and queried cells
//! are ever assembled.
//!
//! Without inducing times the covariance is built exactly (cubic in the
//! number of observations). With inducing times `z` the `P` latent
//! functions are represented by their values at `z`, and the model becomes
//! low-rank-plus-diagonal with rank `P·M`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{eval_kernel, eval_kernel_diag, inducing_covariance, kernel_hyper_vjp, KernelSpec, INDUCING_JITTER};
use crate::numerics::{chol_default, symmetrize};

use super::low_rank::LowRank;
use super::{target_dims, target_times, CovarianceMode, ObservationSet, SampledCovariance, SamplingDistribution, Target};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct LmcParams {
    /// D×P factor of the task covariance.
    pub phi: DMatrix<f64>,
    pub log_task_noise: DVector<f64>,
    /// Inducing times for the sparse path; `None` means exact.
    pub inducing_times: Option<DVector<f64>>,
}

impl LmcParams {
    pub fn new(phi: DMatrix<f64>, task_noise: &[f64]) -> Result<Self> {
        if phi.nrows() != task_noise.len() || phi.ncols() == 0 || phi.ncols() > phi.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "phi {}x{}, {} noise terms",
                phi.nrows(),
                phi.ncols(),
                task_noise.len()
            )));
        }
        if task_noise.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("task noise must be positive".into()));
        }
        Ok(LmcParams {
            phi,
            log_task_noise: DVector::from_iterator(task_noise.len(), task_noise.iter().map(|v| v.ln())),
            inducing_times: None,
        })
    }

    /// Independent tasks to start with: `Φ = I`.
    pub fn identity(d: usize, task_noise: f64) -> Result<Self> {
        Self::new(DMatrix::identity(d, d), &vec![task_noise; d])
    }

    pub fn with_inducing_times(mut self, z: &[f64]) -> Result<Self> {
        if z.is_empty() || z.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("inducing times must be non-empty and strictly increasing".into()));
        }
        self.inducing_times = Some(DVector::from_column_slice(z));
        Ok(self)
    }

    pub fn n_dims(&self) -> usize {
        self.phi.nrows()
    }

    pub fn kf(&self) -> DMatrix<f64> {
        &self.phi * self.phi.transpose()
    }

    pub fn task_noise(&self, d: usize) -> f64 {
        self.log_task_noise[d].exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmcGradients {
    pub value: f64,
    pub log_kernel: Vec<f64>,
    pub phi: DMatrix<f64>,
    pub log_task_noise: DVector<f64>,
}

fn check(obs: &ObservationSet, params: &LmcParams, k_t: &KernelSpec) -> Result<()> {
    if obs.n_dims() != params.n_dims() {
        return Err(Error::DimensionMismatch(format!(
            "{} observed dims, {} in params",
            obs.n_dims(),
            params.n_dims()
        )));
    }
    if k_t.input_dim() != 1 {
        return Err(Error::DimensionMismatch("time kernel must take 1-D inputs".into()));
    }
    Ok(())
}

fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

struct Exact {
    kt: DMatrix<f64>,
    kf: DMatrix<f64>,
    factor: crate::numerics::PsdFactor,
    alpha: DVector<f64>,
    value: f64,
}

fn exact(obs: &ObservationSet, params: &LmcParams, k_t: &KernelSpec) -> Result<Exact> {
    let t = obs.times();
    let dims = obs.dims();
    let n = obs.len();
    let kt = eval_kernel(k_t, &t, &t)?;
    let kf = params.kf();
    let mut k = DMatrix::from_fn(n, n, |i, j| kf[(dims[i], dims[j])] * kt[(i, j)]);
    for (i, &d) in dims.iter().enumerate() {
        k[(i, i)] += params.task_noise(d);
    }
    let factor = chol_default(&symmetrize(&k))?;
    let y = obs.values();
    let alpha = factor.solve_vec(&y);
    let value = -0.5 * (y.dot(&alpha) + factor.logdet() + n as f64 * LN_2PI);
    Ok(Exact {
        kt,
        kf,
        factor,
        alpha,
        value,
    })
}

struct Sparse {
    model: LowRank,
    // k_t(t_i, z_m)
    ktz: DMatrix<f64>,
    z: DMatrix<f64>,
}

// U[i, p·M + m] = Φ[d_i, p] k_t(t_i, z_m)
fn sparse_u(phi: &DMatrix<f64>, dims: &[usize], ktz: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = ktz.shape();
    let p = phi.ncols();
    DMatrix::from_fn(n, p * m, |i, c| phi[(dims[i], c / m)] * ktz[(i, c % m)])
}

fn block_diag(kzz: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let m = kzz.nrows();
    let mut out = DMatrix::zeros(p * m, p * m);
    for b in 0..p {
        out.view_mut((b * m, b * m), (m, m)).copy_from(kzz);
    }
    out
}

fn sparse(obs: &ObservationSet, params: &LmcParams, k_t: &KernelSpec, z: &DVector<f64>) -> Result<Sparse> {
    let t = obs.times();
    let dims = obs.dims();
    let zm = column(z.as_slice());
    let ktz = eval_kernel(k_t, &t, &zm)?;
    let kzz = inducing_covariance(k_t, &zm)?;
    let u = sparse_u(&params.phi, &dims, &ktz);
    let kuu = block_diag(&kzz, params.phi.ncols());
    let kf = params.kf();
    let ktt = eval_kernel_diag(k_t, &t)?;
    let kff = DVector::from_fn(dims.len(), |i, _| kf[(dims[i], dims[i])] * ktt[i]);
    let noise = DVector::from_fn(dims.len(), |i, _| params.task_noise(dims[i]));
    let model = LowRank::new(u, &kuu, &kff, &noise, &obs.values())?;
    Ok(Sparse { model, ktz, z: zm })
}

/// `log N(y | 0, K_obs)` over the observed entries.
pub fn lmc_log_likelihood(obs: &ObservationSet, params: &LmcParams, k_t: &KernelSpec) -> Result<f64> {
    check(obs, params, k_t)?;
    match &params.inducing_times {
        None => Ok(exact(obs, params, k_t)?.value),
        Some(z) => Ok(sparse(obs, params, k_t, z)?.model.log_likelihood()),
    }
}

pub fn lmc_log_likelihood_gradients(obs: &ObservationSet, params: &LmcParams, k_t: &KernelSpec) -> Result<LmcGradients> {
    check(obs, params, k_t)?;
    let dims = obs.dims();
    let n = obs.len();
    let nd = params.n_dims();
    let t = obs.times();
    let mut log_noise = DVector::zeros(nd);
    match &params.inducing_times {
        None => {
            let ex = exact(obs, params, k_t)?;
            let kinv = ex.factor.inverse();
            let g = (&ex.alpha * ex.alpha.transpose() - kinv) * 0.5;
            let g_t = DMatrix::from_fn(n, n, |i, j| g[(i, j)] * ex.kf[(dims[i], dims[j])]);
            let log_kernel = kernel_hyper_vjp(k_t, &t, &t, &g_t)?;
            let mut g_f = DMatrix::zeros(nd, nd);
            for i in 0..n {
                for j in 0..n {
                    g_f[(dims[i], dims[j])] += g[(i, j)] * ex.kt[(i, j)];
                }
                log_noise[dims[i]] += g[(i, i)] * params.task_noise(dims[i]);
            }
            let phi = (&g_f + g_f.transpose()) * &params.phi;
            Ok(LmcGradients {
                value: ex.value,
                log_kernel,
                phi,
                log_task_noise: log_noise,
            })
        }
        Some(z) => {
            let sp = sparse(obs, params, k_t, z)?;
            let adj = sp.model.adjoint(&obs.values());
            let m = z.len();
            let p = params.phi.ncols();
            let mut d_phi = DMatrix::zeros(nd, p);
            let mut g_tz = DMatrix::zeros(n, m);
            for i in 0..n {
                let di = dims[i];
                for b in 0..p {
                    for mm in 0..m {
                        let du = adj.u[(i, b * m + mm)];
                        d_phi[(di, b)] += du * sp.ktz[(i, mm)];
                        g_tz[(i, mm)] += du * params.phi[(di, b)];
                    }
                }
            }
            let mut g_zz = DMatrix::zeros(m, m);
            for b in 0..p {
                g_zz += adj.kuu.view((b * m, b * m), (m, m));
            }
            let ktt = eval_kernel_diag(k_t, &t)?;
            let kf = params.kf();
            let mut g_tt = DMatrix::zeros(n, n);
            for i in 0..n {
                let di = dims[i];
                g_tt[(i, i)] = adj.kff[i] * kf[(di, di)];
                for b in 0..p {
                    d_phi[(di, b)] += adj.kff[i] * 2.0 * params.phi[(di, b)] * ktt[i];
                }
                log_noise[di] += adj.noise[i] * params.task_noise(di);
            }
            let mut log_kernel = kernel_hyper_vjp(k_t, &t, &sp.z, &g_tz)?;
            for (a, b) in log_kernel.iter_mut().zip(kernel_hyper_vjp(k_t, &sp.z, &sp.z, &g_zz)?) {
                *a += b;
            }
            log_kernel[0] += INDUCING_JITTER * k_t.variance() * g_zz.trace();
            for (a, b) in log_kernel.iter_mut().zip(kernel_hyper_vjp(k_t, &t, &t, &g_tt)?) {
                *a += b;
            }
            Ok(LmcGradients {
                value: sp.model.log_likelihood(),
                log_kernel,
                phi: d_phi,
                log_task_noise: log_noise,
            })
        }
    }
}

/// Noise-free predictive of the target cells given the observations.
pub fn lmc_posterior(
    obs: &ObservationSet,
    params: &LmcParams,
    k_t: &KernelSpec,
    targets: &[Target],
    mode: CovarianceMode,
) -> Result<SamplingDistribution> {
    check(obs, params, k_t)?;
    if let Some(d) = targets.iter().map(|t| t.1).find(|&d| d >= params.n_dims()) {
        return Err(Error::DimensionMismatch(format!("target dim {d} of {}", params.n_dims())));
    }
    let ts = target_times(targets);
    let ds = target_dims(targets);
    let ns = targets.len();
    let kf = params.kf();
    let k_ss = match mode {
        CovarianceMode::Diagonal => {
            let kd = eval_kernel_diag(k_t, &ts)?;
            SampledCovariance::Diagonal(DVector::from_fn(ns, |j, _| kf[(ds[j], ds[j])] * kd[j]))
        }
        CovarianceMode::Full => {
            let kss = eval_kernel(k_t, &ts, &ts)?;
            SampledCovariance::Full(DMatrix::from_fn(ns, ns, |i, j| kf[(ds[i], ds[j])] * kss[(i, j)]))
        }
    };
    let (mean, covariance) = match &params.inducing_times {
        None => {
            let ex = exact(obs, params, k_t)?;
            let dims = obs.dims();
            let kso = eval_kernel(k_t, &ts, &obs.times())?;
            let kso = DMatrix::from_fn(ns, obs.len(), |j, i| kf[(ds[j], dims[i])] * kso[(j, i)]);
            let mean = &kso * &ex.alpha;
            let v = ex.factor.solve_lower(&kso.transpose());
            let cov = match k_ss {
                SampledCovariance::Diagonal(p) => {
                    SampledCovariance::Diagonal(DVector::from_fn(ns, |j, _| p[j] - v.column(j).norm_squared()))
                }
                SampledCovariance::Full(p) => SampledCovariance::Full(symmetrize(&(p - v.transpose() * &v))),
            };
            (mean, cov)
        }
        Some(z) => {
            let sp = sparse(obs, params, k_t, z)?;
            let ksz = eval_kernel(k_t, &ts, &sp.z)?;
            let k_su = sparse_u(&params.phi, &ds, &ksz);
            sp.model.predict(&k_su, &k_ss, 0.0, mode)
        }
    };
    Ok(SamplingDistribution {
        targets: targets.to_vec(),
        mean,
        covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multioutput::{gp_predictive, Observation};
    use crate::numerics::finite_diff_grad;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_obs(rng: &mut ChaCha8Rng, d: usize, n: usize) -> ObservationSet {
        let mut entries: Vec<Observation> = Vec::new();
        while entries.len() < n {
            let t = (rng.random_range(0.0..1.0f64) * 30.0).round() / 30.0;
            let dim = if entries.len() < d { entries.len() } else { rng.random_range(0..d) };
            if entries.iter().any(|e| e.time == t && e.dim == dim) {
                continue;
            }
            entries.push(Observation {
                time: t,
                dim,
                value: rng.random_range(-2.0..2.0),
            });
        }
        ObservationSet::new(entries, d).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, d: usize, p: usize) -> LmcParams {
        let phi = DMatrix::from_fn(d, p, |_, _| rng.random_range(-1.0..1.0));
        let noise: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..0.3)).collect();
        LmcParams::new(phi, &noise).unwrap()
    }

    // Full N·D Kronecker covariance, then rows/columns picked out.
    fn kronecker_oracle(
        obs: &ObservationSet,
        params: &LmcParams,
        k: &KernelSpec,
        targets: &[Target],
    ) -> (DVector<f64>, DMatrix<f64>, f64) {
        let mut grid: Vec<f64> = obs.entries().iter().map(|e| e.time).chain(targets.iter().map(|t| t.0)).collect();
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        let nt = grid.len();
        let nd = params.n_dims();
        let kt = eval_kernel(k, &column(&grid), &column(&grid)).unwrap();
        let kf = params.kf();
        let full = kf.kronecker(&kt);
        let idx = |t: f64, d: usize| d * nt + grid.iter().position(|&g| g == t).unwrap();
        let oi: Vec<usize> = obs.entries().iter().map(|e| idx(e.time, e.dim)).collect();
        let si: Vec<usize> = targets.iter().map(|&(t, d)| idx(t, d)).collect();
        let _ = nd;
        let no = oi.len();
        let mut koo = full.select_rows(&oi).select_columns(&oi);
        for (i, e) in obs.entries().iter().enumerate() {
            koo[(i, i)] += params.task_noise(e.dim);
        }
        let kso = full.select_rows(&si).select_columns(&oi);
        let kss = full.select_rows(&si).select_columns(&si);
        let inv = koo.clone().try_inverse().unwrap();
        let y = obs.values();
        let mean = &kso * &inv * &y;
        let cov = kss - &kso * &inv * kso.transpose();
        let ll = -0.5 * (y.dot(&(&inv * &y)) + koo.determinant().ln() + no as f64 * LN_2PI);
        (mean, cov, ll)
    }

    #[test]
    fn single_task_matches_gp() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let obs = random_obs(&mut rng, 1, 10);
        let k = KernelSpec::rbf_ard(1.2, &[0.2]).unwrap();
        let params = LmcParams::new(DMatrix::from_element(1, 1, 1.0), &[0.1]).unwrap();
        let ts = [0.11, 0.5, 0.93];
        let targets: Vec<Target> = ts.iter().map(|&t| (t, 0)).collect();
        let post = lmc_posterior(&obs, &params, &k, &targets, CovarianceMode::Diagonal).unwrap();
        let (m, v) = gp_predictive(&k, &obs.times(), &obs.values(), 0.1, &column(&ts)).unwrap();
        assert!((&post.mean - m).amax() < 1e-10);
        assert!((post.covariance.variances() - v).amax() < 1e-10);
        // log marginal likelihood of the single-task GP
        let kxx = eval_kernel(&k, &obs.times(), &obs.times()).unwrap() + DMatrix::identity(10, 10) * 0.1;
        let y = obs.values();
        let want = -0.5 * (y.dot(&(kxx.clone().try_inverse().unwrap() * &y)) + kxx.determinant().ln() + 10.0 * LN_2PI);
        let ll = lmc_log_likelihood(&obs, &params, &k).unwrap();
        assert!((ll - want).abs() < 1e-10 * want.abs());
    }

    #[test]
    fn noiseless_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let obs = random_obs(&mut rng, 2, 8);
        let k = KernelSpec::rbf_ard(1.0, &[0.3]).unwrap();
        let mut params = random_params(&mut rng, 2, 2);
        params.log_task_noise.fill(1e-12f64.ln());
        let e = obs.entries()[3];
        let post = lmc_posterior(&obs, &params, &k, &[(e.time, e.dim)], CovarianceMode::Diagonal).unwrap();
        assert!((post.mean[0] - e.value).abs() < 1e-5, "{} vs {}", post.mean[0], e.value);
    }

    #[test]
    fn matches_dense_kronecker_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..20 {
            let n = rng.random_range(5..=30);
            let obs = random_obs(&mut rng, 3, n);
            let rank = rng.random_range(1..=3);
            let params = random_params(&mut rng, 3, rank);
            let k = KernelSpec::rbf_ard(rng.random_range(0.5..2.0), &[rng.random_range(0.1..0.6)]).unwrap();
            let targets: Vec<Target> = (0..6).map(|i| (0.05 + i as f64 * 0.17, i % 3)).collect();
            let post = lmc_posterior(&obs, &params, &k, &targets, CovarianceMode::Full).unwrap();
            let (mean, cov, ll) = kronecker_oracle(&obs, &params, &k, &targets);
            let scale = mean.amax().max(1.0);
            assert!((&post.mean - &mean).amax() <= 1e-8 * scale);
            let SampledCovariance::Full(c) = &post.covariance else { panic!() };
            assert!((c - &cov).amax() <= 1e-8 * cov.amax().max(1.0));
            let got = lmc_log_likelihood(&obs, &params, &k).unwrap();
            assert!((got - ll).abs() <= 1e-8 * ll.abs());
            let v = post.covariance.variances();
            let prior = params.kf();
            for (j, &(_, d)) in targets.iter().enumerate() {
                assert!(v[j] <= prior[(d, d)] * k.variance() + 1e-10);
            }
        }
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let obs = random_obs(&mut rng, 3, 15);
        let params = random_params(&mut rng, 3, 2);
        let k = KernelSpec::periodic(1.0, 0.8, 0.4).unwrap();
        let mut e = obs.entries().to_vec();
        e.reverse();
        let perm = ObservationSet::new(e, 3).unwrap();
        let a = lmc_log_likelihood(&obs, &params, &k).unwrap();
        let b = lmc_log_likelihood(&perm, &params, &k).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs());
        let sp = params.clone().with_inducing_times(&[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        let a = lmc_log_likelihood(&obs, &sp, &k).unwrap();
        let b = lmc_log_likelihood(&perm, &sp, &k).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs());
    }

    #[test]
    fn sparse_with_inducing_at_all_times_is_close_to_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let obs = random_obs(&mut rng, 2, 14);
        let params = random_params(&mut rng, 2, 2);
        let k = KernelSpec::rbf_ard(1.0, &[0.3]).unwrap();
        let mut times: Vec<f64> = obs.entries().iter().map(|e| e.time).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        let sp = params.clone().with_inducing_times(&times).unwrap();
        let a = lmc_log_likelihood(&obs, &params, &k).unwrap();
        let b = lmc_log_likelihood(&obs, &sp, &k).unwrap();
        assert!((a - b).abs() < 1e-5 * a.abs(), "{a} vs {b}");
    }

    fn check_gradients(params: &LmcParams, obs: &ObservationSet, k: &KernelSpec) {
        let g = lmc_log_likelihood_gradients(obs, params, k).unwrap();
        let nk = k.n_params();
        let (d, p) = params.phi.shape();
        let mut x: Vec<f64> = k.log_params().to_vec();
        x.extend(params.phi.iter());
        x.extend(params.log_task_noise.iter());
        let f = |x: &[f64]| {
            let mut k2 = k.clone();
            k2.set_log_params(&x[..nk]).unwrap();
            let mut p2 = params.clone();
            p2.phi = DMatrix::from_column_slice(d, p, &x[nk..nk + d * p]);
            p2.log_task_noise = DVector::from_column_slice(&x[nk + d * p..]);
            lmc_log_likelihood(obs, &p2, &k2).unwrap()
        };
        let fd = finite_diff_grad(f, &x, 1e-6).unwrap();
        let mut an = g.log_kernel.clone();
        an.extend(g.phi.iter());
        an.extend(g.log_task_noise.iter());
        for (i, (a, b)) in an.iter().zip(&fd).enumerate() {
            assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "param {i}: {a} vs {b}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for i in 0..6 {
            let obs = random_obs(&mut rng, 3, 16);
            let params = random_params(&mut rng, 3, 2);
            let k = if i % 2 == 0 {
                KernelSpec::rbf_ard(rng.random_range(0.5..1.5), &[rng.random_range(0.15..0.5)]).unwrap()
            } else {
                KernelSpec::periodic(rng.random_range(0.5..1.5), rng.random_range(0.5..1.5), rng.random_range(0.3..0.8)).unwrap()
            };
            check_gradients(&params, &obs, &k);
            let sp = params.with_inducing_times(&[0.0, 0.2, 0.45, 0.7, 1.0]).unwrap();
            check_gradients(&sp, &obs, &k);
        }
    }
}
