//! Collapsed variational lower bound with inducing points.
//!
//! With the inducing outputs integrated out optimally, the data term for
//! output dimension `d` is
//!
//! ```text
//! F_d = −N/2 log 2π + N/2 log β + ½ log|K_MM| − ½ log|A|
//!       − β/2 y_dᵀy_d + β²/2 y_dᵀ Ψ1 A⁻¹ Ψ1ᵀ y_d
//!       − β/2 Ψ0 + β/2 tr(K_MM⁻¹ Ψ2),            A = K_MM + β Ψ2
//! ```
//!
//! and the bound is `Σ_d F_d − KL(q ‖ p)`. When the latent variances vanish
//! and `Z` equals the latent means with `M = N`, `F_d` is exactly the dense
//! GP log marginal likelihood of `y_d`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{
    inducing_covariance, kernel_hyper_vjp, kernel_input_vjp, KernelSpec, INDUCING_JITTER,
};
use crate::numerics::{chol_default, frob_inner};
use crate::psi_stats::{psi_gradients, psi_statistics, GaussianMarginals};
use crate::variational::{
    kl_accumulate, marginals_vjp, posterior_moments, DynamicalPrior, PosteriorAdjoint, VariationalPosterior,
};

/// Inducing locations in latent space, `M × Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct InducingSet {
    pub z: DMatrix<f64>,
}

impl InducingSet {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() == 0 {
            return Err(Error::InvalidArgument("at least one inducing point required".into()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite inducing location".into()));
        }
        Ok(InducingSet { z })
    }

    pub fn m(&self) -> usize {
        self.z.nrows()
    }
}

/// Gaussian noise precision, either shared or one per output dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePrecision {
    log_beta: Vec<f64>,
}

impl NoisePrecision {
    pub fn shared(beta: f64) -> Result<Self> {
        Self::from_log(vec![positive_log(beta)?])
    }

    pub fn per_dimension(betas: &[f64]) -> Result<Self> {
        Self::from_log(betas.iter().map(|&b| positive_log(b)).collect::<Result<_>>()?)
    }

    pub fn from_log(log_beta: Vec<f64>) -> Result<Self> {
        if log_beta.is_empty() || log_beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("invalid noise precision".into()));
        }
        Ok(NoisePrecision { log_beta })
    }

    pub fn is_shared(&self) -> bool {
        self.log_beta.len() == 1
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_beta
    }

    pub fn set_log_values(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.log_beta.len() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("invalid noise precision update".into()));
        }
        self.log_beta.copy_from_slice(v);
        Ok(())
    }

    pub fn beta(&self, d: usize) -> f64 {
        if self.is_shared() {
            self.log_beta[0].exp()
        } else {
            self.log_beta[d].exp()
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.is_shared() || self.log_beta.len() == d {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{} noise precisions for {d} output dimensions",
                self.log_beta.len()
            )))
        }
    }
}

fn positive_log(v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v.ln())
    } else {
        Err(Error::InvalidArgument(format!("noise precision must be positive, got {v}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundValue {
    pub total: f64,
    pub data_term: f64,
    pub kl_term: f64,
    pub per_dimension: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BoundGradients {
    pub mu_bar: DMatrix<f64>,
    pub log_lambda: DMatrix<f64>,
    pub inducing: DMatrix<f64>,
    pub log_mapping: Vec<f64>,
    pub log_dynamical: Vec<f64>,
    pub log_beta: Vec<f64>,
    pub y: DMatrix<f64>,
}

/// Adjoint of the data term with respect to its sufficient statistics.
#[derive(Clone, Debug)]
pub(crate) struct DataAdjoint {
    pub dpsi0: f64,
    pub dpsi1: DMatrix<f64>,
    pub dpsi2: DMatrix<f64>,
    pub dkmm: DMatrix<f64>,
    pub log_beta: Vec<f64>,
    pub y: DMatrix<f64>,
}

fn data_term_impl(
    y: &DMatrix<f64>,
    q: &GaussianMarginals,
    z: &DMatrix<f64>,
    k_f: &KernelSpec,
    noise: &NoisePrecision,
    want_adjoint: bool,
) -> Result<(Vec<f64>, Option<DataAdjoint>)> {
    let (n, d_out) = y.shape();
    if q.n_points() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} data rows, {} latent points",
            n,
            q.n_points()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("data matrix must be fully populated".into()));
    }
    noise.check(d_out)?;
    let psi = psi_statistics(q, k_f, z)?;
    let kmm = inducing_covariance(k_f, z)?;
    let kmm_f = chol_default(&kmm)?;
    let m = z.nrows();
    let kmm_inv = kmm_f.inverse();
    let logdet_kmm = kmm_f.logdet();
    let tr_kinv_psi2 = frob_inner(&kmm_inv, &psi.psi2);
    let nf = n as f64;

    let mut per_dim = vec![0.0; d_out];
    let mut adj = want_adjoint.then(|| DataAdjoint {
        dpsi0: 0.0,
        dpsi1: DMatrix::zeros(n, m),
        dpsi2: DMatrix::zeros(m, m),
        dkmm: DMatrix::zeros(m, m),
        log_beta: vec![0.0; noise.log_values().len()],
        y: DMatrix::zeros(n, d_out),
    });

    let groups: Vec<Vec<usize>> = if noise.is_shared() {
        vec![(0..d_out).collect()]
    } else {
        (0..d_out).map(|d| vec![d]).collect()
    };
    let kinv_psi2_kinv = want_adjoint.then(|| &kmm_inv * &psi.psi2 * &kmm_inv);

    for (gi, dims) in groups.iter().enumerate() {
        if dims.is_empty() {
            continue;
        }
        let beta = noise.beta(dims[0]);
        let mut a = &kmm + kmm_f.jitter_applied() * DMatrix::identity(m, m) + &psi.psi2 * beta;
        a = crate::numerics::symmetrize(&a);
        let a_f = chol_default(&a)?;
        let logdet_a = a_f.logdet();
        let a_inv = want_adjoint.then(|| a_f.inverse());
        let tr_ainv_psi2 = a_inv.as_ref().map(|ai| frob_inner(ai, &psi.psi2));
        let gsize = dims.len() as f64;
        let mut dbeta = 0.0;
        let mut ppt_sum = DMatrix::zeros(m, m);

        for &d in dims {
            let yd = y.column(d).into_owned();
            let c = psi.psi1.transpose() * &yd;
            let p = a_f.solve_vec(&c);
            let yy = yd.norm_squared();
            let cp = c.dot(&p);
            per_dim[d] = -0.5 * nf * (2.0 * PI).ln() + 0.5 * nf * beta.ln() + 0.5 * logdet_kmm
                - 0.5 * logdet_a
                - 0.5 * beta * yy
                + 0.5 * beta * beta * cp
                - 0.5 * beta * psi.psi0
                + 0.5 * beta * tr_kinv_psi2;

            if let Some(adj) = adj.as_mut() {
                adj.dpsi1 += &yd * p.transpose() * (beta * beta);
                ppt_sum += &p * p.transpose();
                let ptp = p.dot(&(&psi.psi2 * &p));
                dbeta += nf / (2.0 * beta) - 0.5 * tr_ainv_psi2.unwrap() - 0.5 * yy + beta * cp
                    - 0.5 * beta * beta * ptp
                    - 0.5 * psi.psi0
                    + 0.5 * tr_kinv_psi2;
                let dy = -&yd * beta + &psi.psi1 * &p * (beta * beta);
                adj.y.set_column(d, &dy);
            }
        }

        if let Some(adj) = adj.as_mut() {
            let a_inv = a_inv.unwrap();
            adj.dpsi0 += -0.5 * beta * gsize;
            adj.dpsi2 += (&kmm_inv - &a_inv) * (0.5 * beta * gsize) - &ppt_sum * (0.5 * beta.powi(3));
            adj.dkmm += (&kmm_inv - &a_inv) * (0.5 * gsize)
                - &ppt_sum * (0.5 * beta * beta)
                - kinv_psi2_kinv.as_ref().unwrap() * (0.5 * beta * gsize);
            adj.log_beta[gi] += beta * dbeta;
        }
    }
    Ok((per_dim, adj))
}

/// Per-dimension data terms `F_d` for fixed latent marginals.
pub fn data_term(
    y: &DMatrix<f64>,
    q: &GaussianMarginals,
    z: &DMatrix<f64>,
    k_f: &KernelSpec,
    noise: &NoisePrecision,
) -> Result<Vec<f64>> {
    Ok(data_term_impl(y, q, z, k_f, noise, false)?.0)
}

pub(crate) fn data_term_with_adjoint(
    y: &DMatrix<f64>,
    q: &GaussianMarginals,
    z: &DMatrix<f64>,
    k_f: &KernelSpec,
    noise: &NoisePrecision,
) -> Result<(Vec<f64>, DataAdjoint)> {
    let (v, a) = data_term_impl(y, q, z, k_f, noise, true)?;
    Ok((v, a.expect("adjoint requested")))
}

pub fn collapsed_bound(
    y: &DMatrix<f64>,
    post: &VariationalPosterior,
    prior: &DynamicalPrior,
    inducing: &InducingSet,
    k_f: &KernelSpec,
    noise: &NoisePrecision,
) -> Result<BoundValue> {
    let moments = posterior_moments(post, prior)?;
    let per_dimension = data_term(y, &moments.marginals(), &inducing.z, k_f, noise)?;
    let kl_term = crate::variational::kl_qp(post, prior)?;
    let data_term: f64 = per_dimension.iter().sum();
    Ok(BoundValue {
        total: data_term - kl_term,
        data_term,
        kl_term,
        per_dimension,
    })
}

pub fn bound_gradients(
    y: &DMatrix<f64>,
    post: &VariationalPosterior,
    prior: &DynamicalPrior,
    inducing: &InducingSet,
    k_f: &KernelSpec,
    noise: &NoisePrecision,
) -> Result<(BoundValue, BoundGradients)> {
    let moments = posterior_moments(post, prior)?;
    let marg = moments.marginals();
    let z = &inducing.z;
    let (per_dimension, adj) = data_term_with_adjoint(y, &marg, z, k_f, noise)?;

    let pg = psi_gradients(&marg, k_f, z, adj.dpsi0, &adj.dpsi1, &adj.dpsi2)?;
    let mut log_mapping = pg.log_hyper;
    let kmm_hyp = kernel_hyper_vjp(k_f, z, z, &adj.dkmm)?;
    for (a, b) in log_mapping.iter_mut().zip(&kmm_hyp) {
        *a += b;
    }
    log_mapping[0] += INDUCING_JITTER * k_f.variance() * adj.dkmm.trace();
    let (dz1, dz2) = kernel_input_vjp(k_f, z, z, &adj.dkmm)?;
    let g_z = pg.inducing + dz1 + dz2;

    let mut padj = PosteriorAdjoint::zeros(post.latent_dim(), post.n());
    marginals_vjp(post, prior, &moments, &pg.means, &pg.variances, &mut padj);
    let kl_term = kl_accumulate(post, prior, &moments, -1.0, &mut padj);
    let log_dynamical = prior.kernel_vjp(&padj.k_t)?;

    let data_term: f64 = per_dimension.iter().sum();
    Ok((
        BoundValue {
            total: data_term - kl_term,
            data_term,
            kl_term,
            per_dimension,
        },
        BoundGradients {
            mu_bar: padj.mu_bar,
            log_lambda: padj.log_lambda,
            inducing: g_z,
            log_mapping,
            log_dynamical,
            log_beta: adj.log_beta,
            y: adj.y,
        },
    ))
}

/// Dense `log N(y | 0, K + β⁻¹ I)`; reference for the degenerate limit.
pub fn dense_gp_log_likelihood(k: &DMatrix<f64>, beta: f64, y: &DVector<f64>) -> Result<f64> {
    let n = y.len();
    let c = k + DMatrix::identity(n, n) / beta;
    let f = chol_default(&crate::numerics::symmetrize(&c))?;
    let alpha = f.solve_vec(y);
    Ok(-0.5 * y.dot(&alpha) - 0.5 * f.logdet() - 0.5 * n as f64 * (2.0 * PI).ln())
}
