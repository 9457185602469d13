//! Temporally coupled variational posterior over latent trajectories.
//!
//! Each latent dimension `q` has free parameters `μ̄_q` and a positive
//! diagonal `Λ_q`, with moments
//!
//! ```text
//! μ_q = K_t μ̄_q
//! S_q = (K_t⁻¹ + Λ_q)⁻¹ = K_t − K_t Λ½ B⁻¹ Λ½ K_t,   B = I + Λ½ K_t Λ½
//! ```
//!
//! `B` has eigenvalues ≥ 1, so nothing here ever factorizes `K_t` itself.
//! The KL against the prior `N(0, K_t)` reduces to
//! `½[tr(B⁻¹) + μ̄ᵀK_tμ̄ − N + log|B|]` per dimension.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{eval_kernel, kernel_hyper_vjp, KernelSpec};
use crate::numerics::{chol_default, PsdFactor};
use crate::psi_stats::GaussianMarginals;

/// GP prior over each latent trajectory, indexed by (rescaled) time.
#[derive(Clone, Debug)]
pub struct DynamicalPrior {
    times: DMatrix<f64>,
    kernel: KernelSpec,
    k_t: DMatrix<f64>,
}

impl DynamicalPrior {
    pub fn new(times: &[f64], kernel: KernelSpec) -> Result<Self> {
        if kernel.input_dim() != 1 {
            return Err(Error::DimensionMismatch("dynamical kernel must take 1-D time".into()));
        }
        if times.is_empty() {
            return Err(Error::InsufficientData("no time points".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::DegenerateTime("non-finite time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::DegenerateTime("times must be strictly increasing".into()));
        }
        let times = DMatrix::from_column_slice(times.len(), 1, times);
        let k_t = eval_kernel(&kernel, &times, &times)?;
        Ok(DynamicalPrior { times, kernel, k_t })
    }

    pub fn n(&self) -> usize {
        self.times.nrows()
    }

    pub fn times(&self) -> &DMatrix<f64> {
        &self.times
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn k_t(&self) -> &DMatrix<f64> {
        &self.k_t
    }

    pub fn set_kernel_log_params(&mut self, p: &[f64]) -> Result<()> {
        self.kernel.set_log_params(p)?;
        self.k_t = eval_kernel(&self.kernel, &self.times, &self.times)?;
        Ok(())
    }

    /// `Σ_ij G_ij ∂K_t[i,j]/∂(log θ_x)`.
    pub fn kernel_vjp(&self, g: &DMatrix<f64>) -> Result<Vec<f64>> {
        kernel_hyper_vjp(&self.kernel, &self.times, &self.times, g)
    }
}

/// Free parameters `μ̄` and `log λ`, both stored `Q × N`.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalPosterior {
    pub mu_bar: DMatrix<f64>,
    pub log_lambda: DMatrix<f64>,
}

impl VariationalPosterior {
    pub fn new(mu_bar: DMatrix<f64>, lambda: &DMatrix<f64>) -> Result<Self> {
        if mu_bar.shape() != lambda.shape() {
            return Err(Error::DimensionMismatch("mu_bar and lambda shapes differ".into()));
        }
        if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("lambda must be strictly positive".into()));
        }
        Ok(VariationalPosterior {
            mu_bar,
            log_lambda: lambda.map(f64::ln),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_bar.nrows()
    }

    pub fn n(&self) -> usize {
        self.mu_bar.ncols()
    }

    pub fn lambda(&self) -> DMatrix<f64> {
        self.log_lambda.map(f64::exp)
    }
}

/// Intermediates for one latent dimension.
#[derive(Clone, Debug)]
struct DimMoments {
    mu: DVector<f64>,
    cov: DMatrix<f64>,
    sqrt_lambda: DVector<f64>,
    b_factor: PsdFactor,
    // B⁻¹ Λ½ K_t
    p: DMatrix<f64>,
}

fn dim_moments(k: &DMatrix<f64>, mu_bar: &DVector<f64>, lambda: &DVector<f64>) -> Result<DimMoments> {
    let n = k.nrows();
    if mu_bar.len() != n || lambda.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "prior over {n} points, parameters of length {}/{}",
            mu_bar.len(),
            lambda.len()
        )));
    }
    if lambda.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidArgument("lambda must be non-negative".into()));
    }
    let sqrt_lambda = lambda.map(f64::sqrt);
    let mut lk = k.clone();
    for i in 0..n {
        lk.row_mut(i).scale_mut(sqrt_lambda[i]);
    }
    let mut b = &lk * DMatrix::from_diagonal(&sqrt_lambda);
    for i in 0..n {
        b[(i, i)] += 1.0;
    }
    let b = crate::numerics::symmetrize(&b);
    let b_factor = chol_default(&b)?;
    let p = b_factor.solve(&lk);
    let cov = crate::numerics::symmetrize(&(k - lk.transpose() * &p));
    let mu = k * mu_bar;
    Ok(DimMoments {
        mu,
        cov,
        sqrt_lambda,
        b_factor,
        p,
    })
}

/// `μ = K_t μ̄`, `S = (K_t⁻¹ + Λ)⁻¹` for a single latent dimension.
pub fn reparam_to_moments(
    prior: &DynamicalPrior,
    mu_bar: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = dim_moments(prior.k_t(), mu_bar, lambda)?;
    Ok((m.mu, m.cov))
}

/// Derived moments of all latent dimensions.
#[derive(Clone, Debug)]
pub struct LatentMoments {
    dims: Vec<DimMoments>,
}

impl LatentMoments {
    pub fn mean(&self, q: usize) -> &DVector<f64> {
        &self.dims[q].mu
    }

    pub fn covariance(&self, q: usize) -> &DMatrix<f64> {
        &self.dims[q].cov
    }

    /// Per-point marginals (diagonal of each `S_q`, clamped at zero).
    pub fn marginals(&self) -> GaussianMarginals {
        let n = self.dims.first().map_or(0, |d| d.mu.len());
        let qd = self.dims.len();
        let means = DMatrix::from_fn(n, qd, |i, q| self.dims[q].mu[i]);
        let variances = DMatrix::from_fn(n, qd, |i, q| self.dims[q].cov[(i, i)].max(0.0));
        GaussianMarginals { means, variances }
    }
}

pub fn posterior_moments(post: &VariationalPosterior, prior: &DynamicalPrior) -> Result<LatentMoments> {
    check_shapes(post, prior)?;
    let lambda = post.lambda();
    let dims = (0..post.latent_dim())
        .map(|q| {
            let mb = post.mu_bar.row(q).transpose();
            let l = lambda.row(q).transpose();
            dim_moments(prior.k_t(), &mb, &l)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentMoments { dims })
}

fn check_shapes(post: &VariationalPosterior, prior: &DynamicalPrior) -> Result<()> {
    if post.n() != prior.n() {
        return Err(Error::DimensionMismatch(format!(
            "posterior over {} points, prior over {}",
            post.n(),
            prior.n()
        )));
    }
    Ok(())
}

fn dim_kl(k: &DMatrix<f64>, mu_bar: &DVector<f64>, m: &DimMoments) -> (f64, DMatrix<f64>) {
    let n = k.nrows() as f64;
    let b_inv = m.b_factor.inverse();
    let quad = mu_bar.dot(&(k * mu_bar));
    let kl = 0.5 * (b_inv.trace() + quad - n + m.b_factor.logdet());
    (kl, b_inv)
}

/// `KL(q(X) ‖ p(X|t))`, summed over latent dimensions.
pub fn kl_qp(post: &VariationalPosterior, prior: &DynamicalPrior) -> Result<f64> {
    Ok(kl_per_dimension(post, prior)?.iter().sum())
}

pub fn kl_per_dimension(post: &VariationalPosterior, prior: &DynamicalPrior) -> Result<Vec<f64>> {
    let moments = posterior_moments(post, prior)?;
    Ok((0..post.latent_dim())
        .map(|q| dim_kl(prior.k_t(), &post.mu_bar.row(q).transpose(), &moments.dims[q]).0)
        .collect())
}

#[derive(Clone, Debug)]
pub struct KlGradients {
    pub mu_bar: DMatrix<f64>,
    pub log_lambda: DMatrix<f64>,
    pub log_kernel: Vec<f64>,
}

/// Accumulated adjoints with respect to the free parameters and to `K_t`.
#[derive(Clone, Debug)]
pub(crate) struct PosteriorAdjoint {
    pub mu_bar: DMatrix<f64>,
    pub log_lambda: DMatrix<f64>,
    pub k_t: DMatrix<f64>,
}

impl PosteriorAdjoint {
    pub fn zeros(qd: usize, n: usize) -> Self {
        PosteriorAdjoint {
            mu_bar: DMatrix::zeros(qd, n),
            log_lambda: DMatrix::zeros(qd, n),
            k_t: DMatrix::zeros(n, n),
        }
    }
}

/// Adds `scale · ∂KL` to the adjoint and returns the KL value.
pub(crate) fn kl_accumulate(
    post: &VariationalPosterior,
    prior: &DynamicalPrior,
    moments: &LatentMoments,
    scale: f64,
    adj: &mut PosteriorAdjoint,
) -> f64 {
    let k = prior.k_t();
    let n = k.nrows();
    let mut total = 0.0;
    for q in 0..post.latent_dim() {
        let m = &moments.dims[q];
        let mb = post.mu_bar.row(q).transpose();
        let (kl, b_inv) = dim_kl(k, &mb, m);
        total += kl;
        let kmb = k * &mb;
        for i in 0..n {
            adj.mu_bar[(q, i)] += scale * kmb[i];
        }
        // G_B = ½(B⁻¹ − B⁻²)
        let g_b = (&b_inv - &b_inv * &b_inv) * 0.5;
        let l = &m.sqrt_lambda;
        let lgl = DMatrix::from_fn(n, n, |i, j| l[i] * g_b[(i, j)] * l[j]);
        adj.k_t += (&mb * mb.transpose() * 0.5 + lgl) * scale;
        // ∂/∂log λ_n = √λ_n (K Λ½ G_B)_nn
        let mut lg = g_b.clone();
        for i in 0..n {
            lg.row_mut(i).scale_mut(l[i]);
        }
        for i in 0..n {
            let diag = k.row(i).dot(&lg.column(i).transpose());
            adj.log_lambda[(q, i)] += scale * l[i] * diag;
        }
    }
    total
}

pub fn kl_gradients(post: &VariationalPosterior, prior: &DynamicalPrior) -> Result<(f64, KlGradients)> {
    let moments = posterior_moments(post, prior)?;
    let mut adj = PosteriorAdjoint::zeros(post.latent_dim(), post.n());
    let kl = kl_accumulate(post, prior, &moments, 1.0, &mut adj);
    let log_kernel = prior.kernel_vjp(&adj.k_t)?;
    Ok((
        kl,
        KlGradients {
            mu_bar: adj.mu_bar,
            log_lambda: adj.log_lambda,
            log_kernel,
        },
    ))
}

/// Chains adjoints of the marginal means (`g_mu`, N×Q) and marginal
/// variances (`g_var`, N×Q) back to `μ̄`, `log λ` and `K_t`.
pub(crate) fn marginals_vjp(
    post: &VariationalPosterior,
    prior: &DynamicalPrior,
    moments: &LatentMoments,
    g_mu: &DMatrix<f64>,
    g_var: &DMatrix<f64>,
    adj: &mut PosteriorAdjoint,
) {
    let k = prior.k_t();
    let n = k.nrows();
    let lambda = post.lambda();
    for q in 0..post.latent_dim() {
        let m = &moments.dims[q];
        let gm = g_mu.column(q).into_owned();
        let gs = g_var.column(q).into_owned();
        let kg = k * &gm;
        for i in 0..n {
            adj.mu_bar[(q, i)] += kg[i];
        }
        let mb = post.mu_bar.row(q);
        adj.k_t += &gm * mb;
        // A = S K⁻¹ = I − (B⁻¹Λ½K)ᵀ Λ½
        let mut a = -m.p.transpose();
        for j in 0..n {
            a.column_mut(j).scale_mut(m.sqrt_lambda[j]);
            a[(j, j)] += 1.0;
        }
        let mut gs_a = a.clone();
        for i in 0..n {
            gs_a.row_mut(i).scale_mut(gs[i]);
        }
        adj.k_t += a.transpose() * gs_a;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                let c = m.cov[(i, j)];
                s += c * c * gs[j];
            }
            adj.log_lambda[(q, i)] -= lambda[(q, i)] * s;
        }
    }
}

/// Latent predictive marginals at new (rescaled) times.
pub fn latent_predictive(
    post: &VariationalPosterior,
    prior: &DynamicalPrior,
    times: &[f64],
) -> Result<GaussianMarginals> {
    check_shapes(post, prior)?;
    let ts = DMatrix::from_column_slice(times.len(), 1, times);
    let k_sn = eval_kernel(prior.kernel(), &ts, prior.times())?;
    let k_ss = crate::kernels::eval_kernel_diag(prior.kernel(), &ts)?;
    let moments = posterior_moments(post, prior)?;
    let (ns, qd) = (times.len(), post.latent_dim());
    let mut means = DMatrix::zeros(ns, qd);
    let mut vars = DMatrix::zeros(ns, qd);
    for q in 0..qd {
        let m = &moments.dims[q];
        let mu = &k_sn * post.mu_bar.row(q).transpose();
        // Λ½ K_N*
        let mut lk = k_sn.transpose();
        for i in 0..lk.nrows() {
            lk.row_mut(i).scale_mut(m.sqrt_lambda[i]);
        }
        let v = m.b_factor.solve_lower(&lk);
        for j in 0..ns {
            means[(j, q)] = mu[j];
            vars[(j, q)] = (k_ss[j] - v.column(j).norm_squared()).max(0.0);
        }
    }
    GaussianMarginals::new(means, vars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{chol_with_jitter, finite_diff_grad, rel_diff};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn prior(n: usize, ls: f64) -> DynamicalPrior {
        let times: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        DynamicalPrior::new(&times, KernelSpec::rbf_ard(1.0, &[ls]).unwrap()).unwrap()
    }

    fn random_post(rng: &mut ChaCha8Rng, qd: usize, n: usize) -> VariationalPosterior {
        let mb = DMatrix::from_fn(qd, n, |_, _| rng.random_range(-1.0..1.0));
        let lam = DMatrix::from_fn(qd, n, |_, _| rng.random_range(0.2..3.0));
        VariationalPosterior::new(mb, &lam).unwrap()
    }

    #[test]
    fn rejects_unsorted_times() {
        let k = KernelSpec::rbf_ard(1.0, &[1.0]).unwrap();
        assert!(matches!(
            DynamicalPrior::new(&[0.0, 0.5, 0.5], k),
            Err(Error::DegenerateTime(_))
        ));
    }

    #[test]
    fn prior_recovery_and_zero_mean() {
        let p = prior(6, 0.4);
        let (mu, s) = reparam_to_moments(&p, &DVector::zeros(6), &DVector::from_element(6, 1e-12)).unwrap();
        assert!(mu.iter().all(|&v| v == 0.0));
        assert!((s - p.k_t()).amax() < 1e-8);
        let (_, s0) = reparam_to_moments(&p, &DVector::zeros(6), &DVector::zeros(6)).unwrap();
        assert!((s0 - p.k_t()).amax() == 0.0);
    }

    #[test]
    fn covariance_matches_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let times = [0.0, 0.7, 1.5, 2.0, 3.1];
        let p = DynamicalPrior::new(&times, KernelSpec::rbf_ard(1.0, &[0.6]).unwrap()).unwrap();
        for _ in 0..10 {
            let lam = DVector::from_fn(5, |_, _| rng.random_range(0.1..5.0));
            let mb = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let (mu, s) = reparam_to_moments(&p, &mb, &lam).unwrap();
            let kinv = p.k_t().clone().try_inverse().unwrap();
            let direct = (kinv + DMatrix::from_diagonal(&lam)).try_inverse().unwrap();
            assert!((&s - &direct).amax() < 1e-8);
            assert!((mu - p.k_t() * mb).amax() < 1e-14);
            assert!((&s - s.transpose()).amax() == 0.0);
        }
    }

    #[test]
    fn kl_textbook_cases() {
        let p = prior(5, 0.3);
        let post = VariationalPosterior::new(DMatrix::zeros(2, 5), &DMatrix::from_element(2, 5, 1e-14)).unwrap();
        assert!(kl_qp(&post, &p).unwrap().abs() < 1e-6);

        let one = DynamicalPrior::new(&[0.0], KernelSpec::rbf_ard(1.0, &[1.0]).unwrap()).unwrap();
        // q = N(1, 1) against p = N(0, 1): λ → 0 keeps S = 1 and μ̄ = 1 gives μ = 1.
        let post = VariationalPosterior::new(DMatrix::from_element(1, 1, 1.0), &DMatrix::from_element(1, 1, 1e-300)).unwrap();
        assert!((kl_qp(&post, &one).unwrap() - 0.5).abs() < 1e-12);
        let (_, g) = kl_gradients(&post, &one).unwrap();
        assert!((g.mu_bar[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_gradient_vanishes_at_prior() {
        let p = prior(4, 0.5);
        let post = VariationalPosterior::new(DMatrix::zeros(1, 4), &DMatrix::from_element(1, 4, 1e-10)).unwrap();
        let (_, g) = kl_gradients(&post, &p).unwrap();
        assert!(g.mu_bar.amax() == 0.0);
    }

    #[test]
    fn kl_is_additive_over_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = prior(7, 0.3);
        let post = random_post(&mut rng, 3, 7);
        let total = kl_qp(&post, &p).unwrap();
        let mut sum = 0.0;
        for q in 0..3 {
            let single = VariationalPosterior {
                mu_bar: post.mu_bar.rows(q, 1).into_owned(),
                log_lambda: post.log_lambda.rows(q, 1).into_owned(),
            };
            sum += kl_qp(&single, &p).unwrap();
        }
        assert!((total - sum).abs() < 1e-12 * total.abs().max(1.0));
        assert!(total >= -1e-8);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let times = [0.0, 0.4, 1.1, 1.7];
        let p = DynamicalPrior::new(&times, KernelSpec::rbf_ard(1.2, &[0.7]).unwrap()).unwrap();
        let post = random_post(&mut rng, 1, 4);
        let kl = kl_qp(&post, &p).unwrap();
        let (mu, s) = reparam_to_moments(&p, &post.mu_bar.row(0).transpose(), &post.lambda().row(0).transpose()).unwrap();
        let ls = chol_with_jitter(&s, 0.0).unwrap();
        let lp = chol_with_jitter(p.k_t(), 0.0).unwrap();
        let (lsm, lpm) = (ls.factor(), lp.factor());
        let samples = 100_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let eps = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
            let x = &mu + &lsm * &eps;
            let log_q = -0.5 * eps.norm_squared() - ls.logdet() / 2.0;
            let mut w = x.clone();
            lpm.solve_lower_triangular_mut(&mut w);
            let log_p = -0.5 * w.norm_squared() - lp.logdet() / 2.0;
            let d = log_q - log_p;
            sum += d;
            sum_sq += d * d;
        }
        let n = samples as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) / (n - 1.0)).sqrt();
        assert!((mean - kl).abs() < 3.0 * se, "kl {kl} vs mc {mean} ± {se}");
    }

    #[test]
    fn kl_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let n = 5;
            let mut p = prior(n, rng.random_range(0.2..0.8));
            p.set_kernel_log_params(&[rng.random_range(-0.5..0.5), rng.random_range(-1.5..-0.3)])
                .unwrap();
            let post = random_post(&mut rng, 2, n);
            let (_, g) = kl_gradients(&post, &p).unwrap();
            let chk = |a: &[f64], b: &[f64], what: &str| {
                for (x, y) in a.iter().zip(b) {
                    assert!(rel_diff(*x, *y, 1e-6) < 1e-4, "trial {trial} {what}: {x} vs {y}");
                }
            };
            let fd = finite_diff_grad(
                |v| {
                    let mut q = post.clone();
                    q.mu_bar = DMatrix::from_column_slice(2, n, v);
                    kl_qp(&q, &p).unwrap()
                },
                post.mu_bar.as_slice(),
                1e-5,
            )
            .unwrap();
            chk(g.mu_bar.as_slice(), &fd, "mu_bar");
            let fd = finite_diff_grad(
                |v| {
                    let mut q = post.clone();
                    q.log_lambda = DMatrix::from_column_slice(2, n, v);
                    kl_qp(&q, &p).unwrap()
                },
                post.log_lambda.as_slice(),
                1e-5,
            )
            .unwrap();
            chk(g.log_lambda.as_slice(), &fd, "log_lambda");
            let fd = finite_diff_grad(
                |v| {
                    let mut pp = p.clone();
                    pp.set_kernel_log_params(v).unwrap();
                    kl_qp(&post, &pp).unwrap()
                },
                p.kernel().log_params(),
                1e-5,
            )
            .unwrap();
            chk(&g.log_kernel, &fd, "kernel");
        }
    }

    #[test]
    fn marginal_adjoint_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..20 {
            let n = 5;
            let p = prior(n, rng.random_range(0.2..0.8));
            let post = random_post(&mut rng, 2, n);
            let gm = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let gv = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let f = |post: &VariationalPosterior, p: &DynamicalPrior| {
                let m = posterior_moments(post, p).unwrap().marginals();
                m.means.component_mul(&gm).sum() + m.variances.component_mul(&gv).sum()
            };
            let moments = posterior_moments(&post, &p).unwrap();
            let mut adj = PosteriorAdjoint::zeros(2, n);
            marginals_vjp(&post, &p, &moments, &gm, &gv, &mut adj);
            let g_kernel = p.kernel_vjp(&adj.k_t).unwrap();
            let chk = |a: &[f64], b: &[f64], what: &str| {
                for (x, y) in a.iter().zip(b) {
                    assert!(rel_diff(*x, *y, 1e-6) < 1e-4, "trial {trial} {what}: {x} vs {y}");
                }
            };
            let fd = finite_diff_grad(
                |v| {
                    let mut q = post.clone();
                    q.mu_bar = DMatrix::from_column_slice(2, n, v);
                    f(&q, &p)
                },
                post.mu_bar.as_slice(),
                1e-5,
            )
            .unwrap();
            chk(adj.mu_bar.as_slice(), &fd, "mu_bar");
            let fd = finite_diff_grad(
                |v| {
                    let mut q = post.clone();
                    q.log_lambda = DMatrix::from_column_slice(2, n, v);
                    f(&q, &p)
                },
                post.log_lambda.as_slice(),
                1e-5,
            )
            .unwrap();
            chk(adj.log_lambda.as_slice(), &fd, "log_lambda");
            let fd = finite_diff_grad(
                |v| {
                    let mut pp = p.clone();
                    pp.set_kernel_log_params(v).unwrap();
                    f(&post, &pp)
                },
                p.kernel().log_params(),
                1e-5,
            )
            .unwrap();
            chk(&g_kernel, &fd, "kernel");
        }
    }

    #[test]
    fn predictive_at_training_times_matches_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = prior(6, 0.3);
        let post = random_post(&mut rng, 2, 6);
        let times: Vec<f64> = p.times().iter().cloned().collect();
        let pred = latent_predictive(&post, &p, &times).unwrap();
        let m = posterior_moments(&post, &p).unwrap().marginals();
        assert!((pred.means - m.means).amax() < 1e-12);
        assert!((pred.variances - m.variances).amax() < 1e-10);
        let far = latent_predictive(&post, &p, &[50.0]).unwrap();
        assert!((far.variances[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(far.means[(0, 0)].abs() < 1e-12);
    }
}
