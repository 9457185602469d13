//! Multi-output GP samplers for the unobserved entries.
//!
//! Two constructions share the dynamical kernel over time: a linear model
//! of coregionalization ([`lmc`]) and a sparse process convolution with one
//! latent function ([`conv`]). Both condition on heterotopic observations
//! and produce a [`SamplingDistribution`] over requested `(time, dim)` cells.

pub mod conv;
pub mod lmc;
mod low_rank;

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::{eval_kernel, eval_kernel_diag, KernelSpec};
use crate::numerics::{chol_default, chol_with_jitter, symmetrize};

pub use conv::{
    conv_cross_cov, conv_latent_cross_cov, sparse_conv_log_likelihood, sparse_conv_log_likelihood_gradients,
    sparse_conv_posterior, ConvGradients, ConvParams,
};
pub use lmc::{lmc_log_likelihood, lmc_log_likelihood_gradients, lmc_posterior, LmcGradients, LmcParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub time: f64,
    pub dim: usize,
    pub value: f64,
}

/// Heterotopic observations: each entry is one `(time, dim, value)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    entries: Vec<Observation>,
    n_dims: usize,
}

impl ObservationSet {
    pub fn new(entries: Vec<Observation>, n_dims: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyObservations);
        }
        let mut seen = HashSet::with_capacity(entries.len());
        let mut per_dim = vec![0usize; n_dims];
        for e in &entries {
            if e.dim >= n_dims {
                return Err(Error::DimensionMismatch(format!("dim {} of {n_dims}", e.dim)));
            }
            if !e.time.is_finite() || !e.value.is_finite() {
                return Err(Error::InvalidArgument("non-finite observation".into()));
            }
            if !seen.insert((e.time.to_bits(), e.dim)) {
                return Err(Error::DuplicateObservation {
                    time: e.time,
                    dim: e.dim,
                });
            }
            per_dim[e.dim] += 1;
        }
        if let Some(d) = per_dim.iter().position(|&c| c == 0) {
            return Err(Error::EmptyDimension(d));
        }
        Ok(ObservationSet { entries, n_dims })
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn times(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(self.len(), 1, self.entries.iter().map(|e| e.time))
    }

    pub fn dims(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.dim).collect()
    }

    pub fn values(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.entries.iter().map(|e| e.value))
    }
}

/// A `(time, dim)` cell to predict.
pub type Target = (f64, usize);

pub(crate) fn target_times(targets: &[Target]) -> DMatrix<f64> {
    DMatrix::from_iterator(targets.len(), 1, targets.iter().map(|t| t.0))
}

pub(crate) fn target_dims(targets: &[Target]) -> Vec<usize> {
    targets.iter().map(|t| t.1).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CovarianceMode {
    #[default]
    Diagonal,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SampledCovariance {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl SampledCovariance {
    pub fn variances(&self) -> DVector<f64> {
        match self {
            SampledCovariance::Diagonal(v) => v.clone(),
            SampledCovariance::Full(m) => m.diagonal(),
        }
    }
}

/// Gaussian over the requested cells.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingDistribution {
    pub targets: Vec<Target>,
    pub mean: DVector<f64>,
    pub covariance: SampledCovariance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DrawMode {
    Mean,
    Sample,
}

/// Imputed values: the mean, or one draw `μ + chol(Σ) ε`.
pub fn draw_samples<R: Rng + ?Sized>(dist: &SamplingDistribution, mode: DrawMode, rng: &mut R) -> Result<DVector<f64>> {
    let n = dist.mean.len();
    if mode == DrawMode::Mean {
        return Ok(dist.mean.clone());
    }
    let eps = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    match &dist.covariance {
        SampledCovariance::Diagonal(v) => Ok(DVector::from_fn(n, |i, _| dist.mean[i] + v[i].max(0.0).sqrt() * eps[i])),
        SampledCovariance::Full(cov) => {
            if cov.iter().all(|&v| v == 0.0) {
                return Ok(dist.mean.clone());
            }
            let f = chol_default(&symmetrize(cov))?;
            Ok(&dist.mean + f.factor() * eps)
        }
    }
}

/// Single-task GP regression: predictive mean and variance of the latent
/// function at `x_test` given noisy observations `y` at `x_train`.
pub fn gp_predictive(
    k: &KernelSpec,
    x_train: &DMatrix<f64>,
    y: &DVector<f64>,
    noise_var: f64,
    x_test: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = x_train.nrows();
    let kxx = eval_kernel(k, x_train, x_train)? + DMatrix::identity(n, n) * noise_var;
    let f = chol_with_jitter(&symmetrize(&kxx), 0.0)?;
    let ksx = eval_kernel(k, x_test, x_train)?;
    let mean = &ksx * f.solve_vec(y);
    let v = f.solve_lower(&ksx.transpose());
    let kss = eval_kernel_diag(k, x_test)?;
    let var = DVector::from_fn(x_test.nrows(), |j, _| kss[j] - v.column(j).norm_squared());
    Ok((mean, var))
}
