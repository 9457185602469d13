//! Expectations of RBF-ARD kernel matrices under a factorized Gaussian.
//!
//! For `x_n ~ N(μ_n, diag(S_n))`, inducing inputs `z_m`, and weights
//! `w_q = 1/ℓ_q²`:
//!
//! ```text
//! Ψ0        = N σ²
//! Ψ1[n,m]   = σ² Π_q (1 + w_q S_nq)^(-1/2) exp(-½ w_q (μ_nq - z_mq)² / (1 + w_q S_nq))
//! Ψ2[m,m']  = Σ_n σ⁴ Π_q (1 + 2 w_q S_nq)^(-1/2)
//!                  exp(-¼ w_q (z_mq - z_m'q)² - w_q (μ_nq - z̄_q)² / (1 + 2 w_q S_nq))
//! ```
//!
//! with `z̄ = (z_m + z_m')/2`. Both follow from completing the square in a
//! product of Gaussians; `Ψ2` uses `k(x,z)k(x,z') = σ⁴ exp(-¼ w (z-z')²) exp(-w (x-z̄)²)`.
//! Only the per-point marginal variances enter; cross-point covariances of
//! a temporally coupled posterior do not affect these expectations.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// Per-point Gaussian marginals of the latent inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMarginals {
    pub means: DMatrix<f64>,
    pub variances: DMatrix<f64>,
}

impl GaussianMarginals {
    pub fn new(means: DMatrix<f64>, variances: DMatrix<f64>) -> Result<Self> {
        if means.shape() != variances.shape() {
            return Err(Error::DimensionMismatch("means and variances differ in shape".into()));
        }
        if variances.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidArgument("marginal variances must be non-negative".into()));
        }
        Ok(GaussianMarginals { means, variances })
    }

    pub fn n_points(&self) -> usize {
        self.means.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.means.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsiStatistics {
    pub psi0: f64,
    pub psi1: DMatrix<f64>,
    pub psi2: DMatrix<f64>,
}

/// Vector-Jacobian product of the Psi statistics.
#[derive(Clone, Debug)]
pub struct PsiGradients {
    pub means: DMatrix<f64>,
    pub variances: DMatrix<f64>,
    pub log_hyper: Vec<f64>,
    pub inducing: DMatrix<f64>,
}

fn check(q: &GaussianMarginals, k: &KernelSpec, z: &DMatrix<f64>) -> Result<()> {
    k.require_rbf("psi statistics")?;
    if q.latent_dim() != k.input_dim() || z.ncols() != k.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "latent dim {} / inducing dim {} / kernel dim {}",
            q.latent_dim(),
            z.ncols(),
            k.input_dim()
        )));
    }
    Ok(())
}

pub fn psi0(q: &GaussianMarginals, k: &KernelSpec) -> Result<f64> {
    k.require_rbf("psi0")?;
    Ok(q.n_points() as f64 * k.variance())
}

pub fn psi1(q: &GaussianMarginals, k: &KernelSpec, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check(q, k, z)?;
    let w = k.ard_weights();
    let var = k.variance();
    let (n, m) = (q.n_points(), z.nrows());
    let mut out = DMatrix::zeros(n, m);
    for i in 0..n {
        let mut norm = var;
        for (d, wd) in w.iter().enumerate() {
            norm /= (1.0 + wd * q.variances[(i, d)]).sqrt();
        }
        for j in 0..m {
            let mut e = 0.0;
            for (d, wd) in w.iter().enumerate() {
                let r = q.means[(i, d)] - z[(j, d)];
                e += wd * r * r / (1.0 + wd * q.variances[(i, d)]);
            }
            out[(i, j)] = norm * (-0.5 * e).exp();
        }
    }
    Ok(out)
}

/// Ψ2 contribution of a single point `i`.
fn psi2_point(q: &GaussianMarginals, i: usize, w: &[f64], var: f64, z: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    let m = z.nrows();
    let mut norm = var * var;
    for (d, wd) in w.iter().enumerate() {
        norm /= (1.0 + 2.0 * wd * q.variances[(i, d)]).sqrt();
    }
    for a in 0..m {
        for b in a..m {
            let mut e = 0.0;
            for (d, wd) in w.iter().enumerate() {
                let delta = z[(a, d)] - z[(b, d)];
                let rho = q.means[(i, d)] - 0.5 * (z[(a, d)] + z[(b, d)]);
                e += 0.25 * wd * delta * delta + wd * rho * rho / (1.0 + 2.0 * wd * q.variances[(i, d)]);
            }
            let v = norm * (-e).exp();
            out[(a, b)] += v;
            if a != b {
                out[(b, a)] += v;
            }
        }
    }
}

pub fn psi2(q: &GaussianMarginals, k: &KernelSpec, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check(q, k, z)?;
    let w = k.ard_weights();
    let var = k.variance();
    let mut out = DMatrix::zeros(z.nrows(), z.nrows());
    for i in 0..q.n_points() {
        psi2_point(q, i, &w, var, z, &mut out);
    }
    Ok(out)
}

/// Per-point Ψ2 matrices, used for predictions at independent test inputs.
pub fn psi2_per_point(q: &GaussianMarginals, k: &KernelSpec, z: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    check(q, k, z)?;
    let w = k.ard_weights();
    let var = k.variance();
    Ok((0..q.n_points())
        .map(|i| {
            let mut out = DMatrix::zeros(z.nrows(), z.nrows());
            psi2_point(q, i, &w, var, z, &mut out);
            out
        })
        .collect())
}

pub fn psi_statistics(q: &GaussianMarginals, k: &KernelSpec, z: &DMatrix<f64>) -> Result<PsiStatistics> {
    Ok(PsiStatistics {
        psi0: psi0(q, k)?,
        psi1: psi1(q, k, z)?,
        psi2: psi2(q, k, z)?,
    })
}

/// Gradients of `dpsi0·Ψ0 + Σ dpsi1∘Ψ1 + Σ dpsi2∘Ψ2` with respect to the
/// marginal means and variances, the kernel log-hyperparameters, and `Z`.
pub fn psi_gradients(
    q: &GaussianMarginals,
    k: &KernelSpec,
    z: &DMatrix<f64>,
    dpsi0: f64,
    dpsi1: &DMatrix<f64>,
    dpsi2: &DMatrix<f64>,
) -> Result<PsiGradients> {
    check(q, k, z)?;
    let (n, m, qd) = (q.n_points(), z.nrows(), q.latent_dim());
    if dpsi1.shape() != (n, m) || dpsi2.shape() != (m, m) {
        return Err(Error::DimensionMismatch("psi adjoint shapes".into()));
    }
    let w = k.ard_weights();
    let var = k.variance();
    let mut g_mu = DMatrix::zeros(n, qd);
    let mut g_s = DMatrix::zeros(n, qd);
    let mut g_z = DMatrix::zeros(m, qd);
    let mut g_hyp = vec![0.0; 1 + qd];

    g_hyp[0] += dpsi0 * n as f64 * var;

    let psi1 = psi1(q, k, z)?;
    for i in 0..n {
        for j in 0..m {
            let c = dpsi1[(i, j)] * psi1[(i, j)];
            if c == 0.0 {
                continue;
            }
            g_hyp[0] += c;
            for d in 0..qd {
                let (wd, s) = (w[d], q.variances[(i, d)]);
                let den = 1.0 + wd * s;
                let r = q.means[(i, d)] - z[(j, d)];
                g_mu[(i, d)] -= c * wd * r / den;
                g_z[(j, d)] += c * wd * r / den;
                g_s[(i, d)] += c * (-0.5 * wd / den + 0.5 * wd * wd * r * r / (den * den));
                g_hyp[1 + d] += c * (wd * s / den + wd * r * r / (den * den));
            }
        }
    }

    let g2 = (dpsi2 + dpsi2.transpose()) * 0.5;
    for i in 0..n {
        let mut norm = var * var;
        for d in 0..qd {
            norm /= (1.0 + 2.0 * w[d] * q.variances[(i, d)]).sqrt();
        }
        for a in 0..m {
            for b in a..m {
                let weight = if a == b { g2[(a, a)] } else { 2.0 * g2[(a, b)] };
                if weight == 0.0 {
                    continue;
                }
                let mut e = 0.0;
                for d in 0..qd {
                    let delta = z[(a, d)] - z[(b, d)];
                    let rho = q.means[(i, d)] - 0.5 * (z[(a, d)] + z[(b, d)]);
                    e += 0.25 * w[d] * delta * delta
                        + w[d] * rho * rho / (1.0 + 2.0 * w[d] * q.variances[(i, d)]);
                }
                let c = weight * norm * (-e).exp();
                g_hyp[0] += 2.0 * c;
                for d in 0..qd {
                    let (wd, s) = (w[d], q.variances[(i, d)]);
                    let den = 1.0 + 2.0 * wd * s;
                    let delta = z[(a, d)] - z[(b, d)];
                    let rho = q.means[(i, d)] - 0.5 * (z[(a, d)] + z[(b, d)]);
                    g_mu[(i, d)] -= c * 2.0 * wd * rho / den;
                    g_s[(i, d)] += c * (-wd / den + 2.0 * wd * wd * rho * rho / (den * den));
                    g_z[(a, d)] += c * (-0.5 * wd * delta + wd * rho / den);
                    g_z[(b, d)] += c * (0.5 * wd * delta + wd * rho / den);
                    g_hyp[1 + d] += c * (2.0 * wd * s / den + 0.5 * wd * delta * delta + 2.0 * wd * rho * rho / (den * den));
                }
            }
        }
    }

    Ok(PsiGradients {
        means: g_mu,
        variances: g_s,
        log_hyper: g_hyp,
        inducing: g_z,
    })
}

/// Standard errors of a Monte-Carlo Psi estimate (Ψ0 is exact for stationary kernels).
#[derive(Clone, Debug, PartialEq)]
pub struct PsiStandardErrors {
    pub psi1: DMatrix<f64>,
    pub psi2: DMatrix<f64>,
}

/// Sample-mean estimate of the Psi statistics by drawing `x_n ~ q`.
pub fn psi_monte_carlo(
    q: &GaussianMarginals,
    k: &KernelSpec,
    z: &DMatrix<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<(PsiStatistics, PsiStandardErrors)> {
    check(q, k, z)?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let (n, m, qd) = (q.n_points(), z.nrows(), q.latent_dim());
    let w = k.ard_weights();
    let var = k.variance();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = n_samples as f64;

    let mut psi1 = DMatrix::zeros(n, m);
    let mut se1 = DMatrix::zeros(n, m);
    let mut psi2 = DMatrix::zeros(m, m);
    let mut var2 = DMatrix::zeros(m, m);
    let sd = q.variances.map(f64::sqrt);
    let mut x = vec![0.0; qd];
    let mut row = vec![0.0; m];
    for i in 0..n {
        // Sums are shifted by the first draw so that degenerate (zero-variance)
        // inputs give exactly zero standard error.
        let mut shift1 = vec![0.0; m];
        let mut shift2 = DMatrix::<f64>::zeros(m, m);
        let mut s1 = vec![0.0; m];
        let mut ss1 = vec![0.0; m];
        let mut s2 = DMatrix::<f64>::zeros(m, m);
        let mut ss2 = DMatrix::<f64>::zeros(m, m);
        for it in 0..n_samples {
            for d in 0..qd {
                let eps: f64 = StandardNormal.sample(&mut rng);
                x[d] = q.means[(i, d)] + sd[(i, d)] * eps;
            }
            for j in 0..m {
                let mut e = 0.0;
                for d in 0..qd {
                    let r = x[d] - z[(j, d)];
                    e += w[d] * r * r;
                }
                row[j] = var * (-0.5 * e).exp();
                if it == 0 {
                    shift1[j] = row[j];
                }
                let v = row[j] - shift1[j];
                s1[j] += v;
                ss1[j] += v * v;
            }
            for a in 0..m {
                for b in a..m {
                    let p = row[a] * row[b];
                    if it == 0 {
                        shift2[(a, b)] = p;
                    }
                    let v = p - shift2[(a, b)];
                    s2[(a, b)] += v;
                    ss2[(a, b)] += v * v;
                }
            }
        }
        for j in 0..m {
            let mean = s1[j] / ns;
            psi1[(i, j)] = shift1[j] + mean;
            se1[(i, j)] = (sample_var(ss1[j], mean, ns) / ns).sqrt();
        }
        for a in 0..m {
            for b in a..m {
                let mean = s2[(a, b)] / ns;
                let v = sample_var(ss2[(a, b)], mean, ns) / ns;
                let est = shift2[(a, b)] + mean;
                psi2[(a, b)] += est;
                var2[(a, b)] += v;
                if a != b {
                    psi2[(b, a)] += est;
                    var2[(b, a)] += v;
                }
            }
        }
    }
    Ok((
        PsiStatistics {
            psi0: n as f64 * var,
            psi1,
            psi2,
        },
        PsiStandardErrors {
            psi1: se1,
            psi2: var2.map(f64::sqrt),
        },
    ))
}

fn sample_var(sum_sq: f64, mean: f64, n: f64) -> f64 {
    if n < 2.0 {
        return 0.0;
    }
    ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
}
