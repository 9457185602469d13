//! Sparse process convolution with a single latent function `u`.
//!
//! Output `d` is `f_d(t) = ∫ g_d N(t − τ; 0, s_d²) u(τ) dτ` with `u` drawn
//! from the shared RBF kernel `σ² exp(−r²/2ℓ²)`. Convolving Gaussians gives
//!
//! ```text
//! cov[f_d(t), u(z)]      = g_d σ² ℓ/√(ℓ²+s_d²) exp(−r²/2(ℓ²+s_d²))
//! cov[f_d(t), f_e(t')]   = g_d g_e σ² ℓ/√v exp(−r²/2v),  v = ℓ²+s_d²+s_e²
//! ```
//!
//! The likelihood keeps the exact diagonal of `K_ff` (a FITC-style
//! correction), so the model is low-rank-plus-diagonal in `u` at the
//! latent inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{inducing_covariance, kernel_hyper_vjp, KernelSpec, INDUCING_JITTER};

use super::low_rank::LowRank;
use super::{target_dims, target_times, CovarianceMode, ObservationSet, SampledCovariance, SamplingDistribution, Target};

/// Smoothing kernels, latent inputs and noise. The latent kernel itself is
/// the dynamical kernel and is passed alongside, never stored here.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub smoothing_gains: DVector<f64>,
    pub log_smoothing_scales: DVector<f64>,
    pub latent_inputs: DVector<f64>,
    pub log_task_noise: DVector<f64>,
    pub prediction_noise: f64,
}

impl ConvParams {
    pub fn new(gains: &[f64], scales: &[f64], latent_inputs: &[f64], task_noise: &[f64], prediction_noise: f64) -> Result<Self> {
        let d = gains.len();
        if scales.len() != d || task_noise.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "gains {d}, scales {}, noise {}",
                scales.len(),
                task_noise.len()
            )));
        }
        if scales.iter().chain(task_noise).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("scales and task noise must be positive".into()));
        }
        if latent_inputs.is_empty() || latent_inputs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("latent inputs must be non-empty and strictly increasing".into()));
        }
        if !(prediction_noise >= 0.0) {
            return Err(Error::InvalidArgument("prediction noise must be non-negative".into()));
        }
        Ok(ConvParams {
            smoothing_gains: DVector::from_column_slice(gains),
            log_smoothing_scales: DVector::from_iterator(d, scales.iter().map(|s| s.ln())),
            latent_inputs: DVector::from_column_slice(latent_inputs),
            log_task_noise: DVector::from_iterator(d, task_noise.iter().map(|s| s.ln())),
            prediction_noise,
        })
    }

    pub fn n_dims(&self) -> usize {
        self.smoothing_gains.len()
    }

    pub fn scale(&self, d: usize) -> f64 {
        self.log_smoothing_scales[d].exp()
    }

    pub fn task_noise(&self, d: usize) -> f64 {
        self.log_task_noise[d].exp()
    }

    fn latent_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.latent_inputs.len(), 1, self.latent_inputs.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGradients {
    pub value: f64,
    pub log_kernel: Vec<f64>,
    pub gains: DVector<f64>,
    pub log_smoothing_scales: DVector<f64>,
    pub log_task_noise: DVector<f64>,
}

fn latent_rbf(kernel: &KernelSpec) -> Result<(f64, f64)> {
    kernel.require_rbf("process convolution")?;
    if kernel.input_dim() != 1 {
        return Err(Error::UnsupportedKernel("convolution needs a 1-D latent kernel".into()));
    }
    Ok((kernel.variance(), kernel.lengthscales()[0]))
}

fn check_dims(params: &ConvParams, dims: &[usize]) -> Result<()> {
    match dims.iter().find(|&&d| d >= params.n_dims()) {
        Some(d) => Err(Error::DimensionMismatch(format!("dim {d} of {}", params.n_dims()))),
        None => Ok(()),
    }
}

/// `cov[f_{dims_a[i]}(times_a[i]), f_{dims_b[j]}(times_b[j])]`.
pub fn conv_cross_cov(
    params: &ConvParams,
    kernel: &KernelSpec,
    times_a: &[f64],
    dims_a: &[usize],
    times_b: &[f64],
    dims_b: &[usize],
) -> Result<DMatrix<f64>> {
    let (sf2, l) = latent_rbf(kernel)?;
    if times_a.len() != dims_a.len() || times_b.len() != dims_b.len() {
        return Err(Error::DimensionMismatch("times and dims differ in length".into()));
    }
    check_dims(params, dims_a)?;
    check_dims(params, dims_b)?;
    let s2: Vec<f64> = (0..params.n_dims()).map(|d| params.scale(d).powi(2)).collect();
    Ok(DMatrix::from_fn(times_a.len(), times_b.len(), |i, j| {
        let (da, db) = (dims_a[i], dims_b[j]);
        let v = l * l + s2[da] + s2[db];
        let r = times_a[i] - times_b[j];
        params.smoothing_gains[da] * params.smoothing_gains[db] * sf2 * l / v.sqrt() * (-0.5 * r * r / v).exp()
    }))
}

/// `cov[f_{dims[i]}(times[i]), u(z_m)]` against the latent inputs.
pub fn conv_latent_cross_cov(params: &ConvParams, kernel: &KernelSpec, times: &[f64], dims: &[usize]) -> Result<DMatrix<f64>> {
    let (sf2, l) = latent_rbf(kernel)?;
    if times.len() != dims.len() {
        return Err(Error::DimensionMismatch("times and dims differ in length".into()));
    }
    check_dims(params, dims)?;
    let z = &params.latent_inputs;
    Ok(DMatrix::from_fn(times.len(), z.len(), |i, m| {
        let d = dims[i];
        let v = l * l + params.scale(d).powi(2);
        let r = times[i] - z[m];
        params.smoothing_gains[d] * sf2 * l / v.sqrt() * (-0.5 * r * r / v).exp()
    }))
}

fn prior_diag(params: &ConvParams, sf2: f64, l: f64, dims: &[usize]) -> DVector<f64> {
    DVector::from_iterator(
        dims.len(),
        dims.iter().map(|&d| {
            let g = params.smoothing_gains[d];
            g * g * sf2 * l / (l * l + 2.0 * params.scale(d).powi(2)).sqrt()
        }),
    )
}

fn build(obs: &ObservationSet, params: &ConvParams, kernel: &KernelSpec) -> Result<LowRank> {
    if obs.n_dims() != params.n_dims() {
        return Err(Error::DimensionMismatch(format!("{} observed dims, {} in params", obs.n_dims(), params.n_dims())));
    }
    let (sf2, l) = latent_rbf(kernel)?;
    let times: Vec<f64> = obs.entries().iter().map(|e| e.time).collect();
    let dims = obs.dims();
    let u = conv_latent_cross_cov(params, kernel, &times, &dims)?;
    let zm = params.latent_matrix();
    let kuu = inducing_covariance(kernel, &zm)?;
    let kff = prior_diag(params, sf2, l, &dims);
    let noise = DVector::from_iterator(dims.len(), dims.iter().map(|&d| params.task_noise(d)));
    LowRank::new(u, &kuu, &kff, &noise, &obs.values())
}

/// Exact log-likelihood of the observed entries under the low-rank-plus-
/// diagonal convolution model.
pub fn sparse_conv_log_likelihood(obs: &ObservationSet, params: &ConvParams, kernel: &KernelSpec) -> Result<f64> {
    Ok(build(obs, params, kernel)?.log_likelihood())
}

pub fn sparse_conv_log_likelihood_gradients(obs: &ObservationSet, params: &ConvParams, kernel: &KernelSpec) -> Result<ConvGradients> {
    let model = build(obs, params, kernel)?;
    let y = obs.values();
    let adj = model.adjoint(&y);
    let (sf2, l) = latent_rbf(kernel)?;
    let nd = params.n_dims();
    let z = &params.latent_inputs;
    let zm = params.latent_matrix();

    let mut log_kernel = kernel_hyper_vjp(kernel, &zm, &zm, &adj.kuu)?;
    log_kernel[0] += INDUCING_JITTER * sf2 * adj.kuu.trace();
    let mut gains = DVector::zeros(nd);
    let mut log_scales = DVector::zeros(nd);
    let mut log_noise = DVector::zeros(nd);
    let l2 = l * l;
    for (i, e) in obs.entries().iter().enumerate() {
        let d = e.dim;
        let g = params.smoothing_gains[d];
        let s2 = params.scale(d).powi(2);
        let v = l2 + s2;
        for m in 0..z.len() {
            let r2 = (e.time - z[m]).powi(2);
            let base = sf2 * l / v.sqrt() * (-0.5 * r2 / v).exp();
            let du = adj.u[(i, m)];
            let c = du * g * base;
            log_kernel[0] += c;
            log_kernel[1] += c * (1.0 - l2 / v + r2 * l2 / (v * v));
            log_scales[d] += c * (-s2 / v + r2 * s2 / (v * v));
            gains[d] += du * base;
        }
        let v2 = l2 + 2.0 * s2;
        let base = sf2 * l / v2.sqrt();
        let c = adj.kff[i] * g * g * base;
        log_kernel[0] += c;
        log_kernel[1] += c * (1.0 - l2 / v2);
        log_scales[d] += c * (-2.0 * s2 / v2);
        gains[d] += adj.kff[i] * 2.0 * g * base;
        log_noise[d] += adj.noise[i] * params.task_noise(d);
    }
    // ARD kernels store one log-lengthscale; index 1 is it for a 1-D input.
    debug_assert_eq!(log_kernel.len(), 2);
    Ok(ConvGradients {
        value: model.log_likelihood(),
        log_kernel,
        gains,
        log_smoothing_scales: log_scales,
        log_task_noise: log_noise,
    })
}

/// Predictive over the target cells, with `prediction_noise` added to the
/// diagonal.
pub fn sparse_conv_posterior(
    obs: &ObservationSet,
    params: &ConvParams,
    kernel: &KernelSpec,
    targets: &[Target],
    mode: CovarianceMode,
) -> Result<SamplingDistribution> {
    let model = build(obs, params, kernel)?;
    let (sf2, l) = latent_rbf(kernel)?;
    let tt: Vec<f64> = target_times(targets).iter().copied().collect();
    let td = target_dims(targets);
    let k_su = conv_latent_cross_cov(params, kernel, &tt, &td)?;
    let k_ss = match mode {
        CovarianceMode::Diagonal => SampledCovariance::Diagonal(prior_diag(params, sf2, l, &td)),
        CovarianceMode::Full => SampledCovariance::Full(conv_cross_cov(params, kernel, &tt, &td, &tt, &td)?),
    };
    let (mean, covariance) = model.predict(&k_su, &k_ss, params.prediction_noise, mode);
    Ok(SamplingDistribution {
        targets: targets.to_vec(),
        mean,
        covariance,
    })
}
