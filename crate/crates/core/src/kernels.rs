//! Covariance functions with gradients in log-hyperparameter space.
//!
//! Parameters are held as logs in declaration order:
//!
//! | family      | parameters                                   |
//! |-------------|----------------------------------------------|
//! | `RbfArd`    | `log σ²`, `log ℓ_1 … log ℓ_Q`                |
//! | `Periodic`  | `log σ²`, `log ℓ`, `log period` (1-D input)  |
//! | `WhiteNoise`| `log σ²`                                     |

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFamily {
    RbfArd,
    Periodic,
    WhiteNoise,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::RbfArd => "rbf",
            KernelFamily::Periodic => "periodic",
            KernelFamily::WhiteNoise => "white",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rbf" | "rbfard" | "rbf_ard" => Ok(KernelFamily::RbfArd),
            "periodic" => Ok(KernelFamily::Periodic),
            "white" | "whitenoise" | "white_noise" => Ok(KernelFamily::WhiteNoise),
            other => Err(Error::Parse(format!("unknown kernel family '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    input_dim: usize,
    log_params: Vec<f64>,
}

fn check_positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v.ln())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

impl KernelSpec {
    pub fn rbf_ard(variance: f64, lengthscales: &[f64]) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::InvalidArgument("RBF needs at least one lengthscale".into()));
        }
        let mut log_params = vec![check_positive("variance", variance)?];
        for &l in lengthscales {
            log_params.push(check_positive("lengthscale", l)?);
        }
        Ok(KernelSpec {
            family: KernelFamily::RbfArd,
            input_dim: lengthscales.len(),
            log_params,
        })
    }

    pub fn periodic(variance: f64, lengthscale: f64, period: f64) -> Result<Self> {
        Ok(KernelSpec {
            family: KernelFamily::Periodic,
            input_dim: 1,
            log_params: vec![
                check_positive("variance", variance)?,
                check_positive("lengthscale", lengthscale)?,
                check_positive("period", period)?,
            ],
        })
    }

    pub fn white_noise(variance: f64, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        Ok(KernelSpec {
            family: KernelFamily::WhiteNoise,
            input_dim,
            log_params: vec![check_positive("variance", variance)?],
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_params(&self) -> usize {
        self.log_params.len()
    }

    pub fn log_params(&self) -> &[f64] {
        &self.log_params
    }

    pub fn set_log_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.log_params.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} kernel takes {} parameters, got {}",
                self.family,
                self.log_params.len(),
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite kernel parameter".into()));
        }
        self.log_params.copy_from_slice(p);
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["variance".to_string()];
        match self.family {
            KernelFamily::RbfArd => {
                names.extend((0..self.input_dim).map(|q| format!("lengthscale{q}")))
            }
            KernelFamily::Periodic => {
                names.push("lengthscale".into());
                names.push("period".into());
            }
            KernelFamily::WhiteNoise => {}
        }
        names
    }

    pub fn variance(&self) -> f64 {
        self.log_params[0].exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        match self.family {
            KernelFamily::RbfArd => self.log_params[1..].iter().map(|v| v.exp()).collect(),
            KernelFamily::Periodic => vec![self.log_params[1].exp()],
            KernelFamily::WhiteNoise => Vec::new(),
        }
    }

    pub fn period(&self) -> Option<f64> {
        match self.family {
            KernelFamily::Periodic => Some(self.log_params[2].exp()),
            _ => None,
        }
    }

    /// Inverse squared lengthscales `w_q = 1/ℓ_q²` (RBF only).
    pub fn ard_weights(&self) -> Vec<f64> {
        match self.family {
            KernelFamily::RbfArd => self.log_params[1..].iter().map(|l| (-2.0 * l).exp()).collect(),
            _ => Vec::new(),
        }
    }

    /// ARD weights normalized so the largest is one.
    pub fn relevances(&self) -> Vec<f64> {
        let w = self.ard_weights();
        let max = w.iter().cloned().fold(0.0, f64::max);
        w.iter().map(|v| v / max).collect()
    }

    pub(crate) fn require_rbf(&self, what: &str) -> Result<()> {
        if self.family == KernelFamily::RbfArd {
            Ok(())
        } else {
            Err(Error::UnsupportedKernel(format!(
                "{what} needs an rbf kernel, got {}",
                self.family
            )))
        }
    }

    fn check_cols(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "{} kernel over {} inputs applied to {} columns",
                self.family,
                self.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    fn sq_dist_weighted(&self, x1: &DMatrix<f64>, i: usize, x2: &DMatrix<f64>, j: usize, w: &[f64]) -> f64 {
        let mut s = 0.0;
        for (q, wq) in w.iter().enumerate() {
            let d = x1[(i, q)] - x2[(j, q)];
            s += wq * d * d;
        }
        s
    }

    fn entry(&self, x1: &DMatrix<f64>, i: usize, x2: &DMatrix<f64>, j: usize, w: &[f64], same: bool) -> f64 {
        let var = self.variance();
        match self.family {
            KernelFamily::RbfArd => var * (-0.5 * self.sq_dist_weighted(x1, i, x2, j, w)).exp(),
            KernelFamily::Periodic => {
                let l2 = (2.0 * self.log_params[1]).exp();
                let p = self.log_params[2].exp();
                let s = (PI * (x1[(i, 0)] - x2[(j, 0)]).abs() / p).sin();
                var * (-2.0 * s * s / l2).exp()
            }
            KernelFamily::WhiteNoise => {
                if same && i == j {
                    var
                } else {
                    0.0
                }
            }
        }
    }
}

/// Cross-covariance `K[i,j] = k(x1_i, x2_j)`.
///
/// The white-noise family is nonzero only when `x1` and `x2` are the same
/// object; passing a copy of the same inputs yields zeros.
pub fn eval_kernel(spec: &KernelSpec, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.check_cols(x1)?;
    spec.check_cols(x2)?;
    let same = std::ptr::eq(x1, x2);
    let w = spec.ard_weights();
    let mut k = DMatrix::zeros(x1.nrows(), x2.nrows());
    if same {
        for j in 0..x2.nrows() {
            for i in j..x1.nrows() {
                let v = spec.entry(x1, i, x2, j, &w, true);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
    } else {
        for j in 0..x2.nrows() {
            for i in 0..x1.nrows() {
                k[(i, j)] = spec.entry(x1, i, x2, j, &w, false);
            }
        }
    }
    Ok(k)
}

/// Fixed jitter on inducing covariances, relative to the kernel variance.
/// Without it an objective turns non-smooth once two inducing inputs meet
/// and the Cholesky jitter ladder starts switching rungs.
pub const INDUCING_JITTER: f64 = 1e-6;

/// `K(Z, Z) + INDUCING_JITTER·σ²·I`. Its gradient with respect to log σ²
/// gains `INDUCING_JITTER·σ²·tr(G)` on top of the kernel's own.
pub fn inducing_covariance(spec: &KernelSpec, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut k = eval_kernel(spec, z, z)?;
    let j = INDUCING_JITTER * spec.variance();
    for i in 0..z.nrows() {
        k[(i, i)] += j;
    }
    Ok(k)
}

/// `k(x_i, x_i)` for each row.
pub fn eval_kernel_diag(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<nalgebra::DVector<f64>> {
    spec.check_cols(x)?;
    // All three families are stationary with k(x, x) = σ².
    Ok(nalgebra::DVector::from_element(x.nrows(), spec.variance()))
}

/// `∂K/∂(log θ)` for each hyperparameter, in declaration order.
pub fn kernel_gradients(spec: &KernelSpec, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let k = eval_kernel(spec, x1, x2)?;
    let mut grads = vec![k.clone()];
    match spec.family {
        KernelFamily::RbfArd => {
            let w = spec.ard_weights();
            for (q, wq) in w.iter().enumerate() {
                grads.push(DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| {
                    let d = x1[(i, q)] - x2[(j, q)];
                    k[(i, j)] * wq * d * d
                }));
            }
        }
        KernelFamily::Periodic => {
            let (dl, dp) = periodic_factors(spec, x1, x2, &k);
            grads.push(dl);
            grads.push(dp);
        }
        KernelFamily::WhiteNoise => {}
    }
    Ok(grads)
}

fn periodic_factors(
    spec: &KernelSpec,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let l2 = (2.0 * spec.log_params[1]).exp();
    let p = spec.log_params[2].exp();
    let dl = DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| {
        let s = (PI * (x1[(i, 0)] - x2[(j, 0)]) / p).sin();
        k[(i, j)] * 4.0 * s * s / l2
    });
    let dp = DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| {
        let a = PI * (x1[(i, 0)] - x2[(j, 0)]) / p;
        k[(i, j)] * 2.0 * a * (2.0 * a).sin() / l2
    });
    (dl, dp)
}

/// `Σ_ij G_ij ∂K_ij/∂(log θ)` without materializing the per-parameter matrices.
pub fn kernel_hyper_vjp(
    spec: &KernelSpec,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let k = eval_kernel(spec, x1, x2)?;
    if g.shape() != k.shape() {
        return Err(Error::DimensionMismatch("adjoint shape differs from kernel".into()));
    }
    let gk = g.component_mul(&k);
    let mut out = vec![gk.sum()];
    match spec.family {
        KernelFamily::RbfArd => {
            let w = spec.ard_weights();
            for (q, wq) in w.iter().enumerate() {
                let mut s = 0.0;
                for j in 0..k.ncols() {
                    for i in 0..k.nrows() {
                        let d = x1[(i, q)] - x2[(j, q)];
                        s += gk[(i, j)] * d * d;
                    }
                }
                out.push(wq * s);
            }
        }
        KernelFamily::Periodic => {
            let (dl, dp) = periodic_factors(spec, x1, x2, &k);
            out.push(g.component_mul(&dl).sum());
            out.push(g.component_mul(&dp).sum());
        }
        KernelFamily::WhiteNoise => {}
    }
    Ok(out)
}

/// Adjoint of an RBF kernel matrix with respect to both input sets.
pub fn kernel_input_vjp(
    spec: &KernelSpec,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    spec.require_rbf("input gradients")?;
    let k = eval_kernel(spec, x1, x2)?;
    let w = spec.ard_weights();
    let mut d1 = DMatrix::zeros(x1.nrows(), x1.ncols());
    let mut d2 = DMatrix::zeros(x2.nrows(), x2.ncols());
    for j in 0..x2.nrows() {
        for i in 0..x1.nrows() {
            let gk = g[(i, j)] * k[(i, j)];
            if gk == 0.0 {
                continue;
            }
            for (q, wq) in w.iter().enumerate() {
                let t = gk * wq * (x1[(i, q)] - x2[(j, q)]);
                d1[(i, q)] -= t;
                d2[(j, q)] += t;
            }
        }
    }
    Ok((d1, d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{chol_with_jitter, finite_diff_grad, rel_diff};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn random_inputs(n: usize, q: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, q, |_, _| rng.random_range(-2.0..2.0))
    }

    fn random_spec(family: KernelFamily, q: usize, rng: &mut ChaCha8Rng) -> KernelSpec {
        match family {
            KernelFamily::RbfArd => {
                let ls: Vec<f64> = (0..q).map(|_| rng.random_range(0.4..2.5)).collect();
                KernelSpec::rbf_ard(rng.random_range(0.3..3.0), &ls).unwrap()
            }
            KernelFamily::Periodic => KernelSpec::periodic(
                rng.random_range(0.3..3.0),
                rng.random_range(0.5..2.0),
                rng.random_range(0.7..3.0),
            )
            .unwrap(),
            KernelFamily::WhiteNoise => KernelSpec::white_noise(rng.random_range(0.1..2.0), q).unwrap(),
        }
    }

    #[test]
    fn closed_form_values() {
        let k = KernelSpec::rbf_ard(1.0, &[1.0]).unwrap();
        let x = col(&[0.3]);
        assert_eq!(eval_kernel(&k, &x, &x).unwrap()[(0, 0)], 1.0);
        let v = eval_kernel(&k, &col(&[0.0]), &col(&[1.0])).unwrap()[(0, 0)];
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);

        let p = KernelSpec::periodic(1.0, 0.7, 1.3).unwrap();
        let v = eval_kernel(&p, &col(&[0.4]), &col(&[0.4 + 1.3])).unwrap()[(0, 0)];
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diag_fast_path() {
        let k = KernelSpec::rbf_ard(2.5, &[1.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_inputs(4, 2, &mut rng);
        let d = eval_kernel_diag(&k, &x).unwrap();
        assert!(d.iter().all(|&v| v == 2.5));
        let full = eval_kernel(&k, &x, &x).unwrap();
        for i in 0..4 {
            assert!((full[(i, i)] - d[i]).abs() < 1e-14);
        }
        let wn = KernelSpec::white_noise(0.1, 1).unwrap();
        let t = col(&[0.0, 1.0, 2.0]);
        let d = eval_kernel_diag(&wn, &t).unwrap();
        assert!(d.iter().all(|v| (v - 0.1).abs() < 1e-15));
        let full = eval_kernel(&wn, &t, &t).unwrap();
        assert!((full - DMatrix::identity(3, 3) * 0.1).amax() < 1e-15);
        let copy = t.clone();
        assert_eq!(eval_kernel(&wn, &t, &copy).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn dimension_mismatch() {
        let k = KernelSpec::rbf_ard(1.0, &[1.0, 1.0]).unwrap();
        assert!(matches!(
            eval_kernel(&k, &col(&[1.0]), &col(&[1.0])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn variance_gradient_is_kernel_and_lengthscale_vanishes_on_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_inputs(5, 2, &mut rng);
        for fam in [KernelFamily::RbfArd, KernelFamily::WhiteNoise] {
            let k = random_spec(fam, 2, &mut rng);
            let g = kernel_gradients(&k, &x, &x).unwrap();
            assert_eq!(g[0], eval_kernel(&k, &x, &x).unwrap());
        }
        let k = random_spec(KernelFamily::RbfArd, 2, &mut rng);
        let g = kernel_gradients(&k, &x, &x).unwrap();
        for m in &g[1..] {
            for i in 0..5 {
                assert_eq!(m[(i, i)], 0.0);
            }
        }
    }

    #[test]
    fn hyper_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..50 {
            let fam = [KernelFamily::RbfArd, KernelFamily::Periodic][trial % 2];
            let q = if fam == KernelFamily::Periodic { 1 } else { 1 + trial % 3 };
            let spec = random_spec(fam, q, &mut rng);
            let x1 = random_inputs(3, q, &mut rng);
            let x2 = random_inputs(4, q, &mut rng);
            let grads = kernel_gradients(&spec, &x1, &x2).unwrap();
            let g = random_inputs(3, 4, &mut rng);
            let vjp = kernel_hyper_vjp(&spec, &x1, &x2, &g).unwrap();
            let fd = finite_diff_grad(
                |p| {
                    let mut s = spec.clone();
                    s.set_log_params(p).unwrap();
                    eval_kernel(&s, &x1, &x2).unwrap().component_mul(&g).sum()
                },
                spec.log_params(),
                1e-5,
            )
            .unwrap();
            for (i, fdv) in fd.iter().enumerate() {
                assert!(rel_diff(vjp[i], *fdv, 1e-6) < 1e-4, "trial {trial} param {i}");
                let from_mats = grads[i].component_mul(&g).sum();
                assert!(rel_diff(from_mats, vjp[i], 1e-10) < 1e-10);
            }
        }
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let spec = random_spec(KernelFamily::RbfArd, 2, &mut rng);
            let x1 = random_inputs(3, 2, &mut rng);
            let x2 = random_inputs(2, 2, &mut rng);
            let g = random_inputs(3, 2, &mut rng);
            let (d1, d2) = kernel_input_vjp(&spec, &x1, &x2, &g).unwrap();
            let fd1 = finite_diff_grad(
                |v| {
                    let x = DMatrix::from_column_slice(3, 2, v);
                    eval_kernel(&spec, &x, &x2).unwrap().component_mul(&g).sum()
                },
                x1.as_slice(),
                1e-5,
            )
            .unwrap();
            let fd2 = finite_diff_grad(
                |v| {
                    let x = DMatrix::from_column_slice(2, 2, v);
                    eval_kernel(&spec, &x1, &x).unwrap().component_mul(&g).sum()
                },
                x2.as_slice(),
                1e-5,
            )
            .unwrap();
            for (a, b) in d1.iter().zip(&fd1).chain(d2.iter().zip(&fd2)) {
                assert!(rel_diff(*a, *b, 1e-6) < 1e-4);
            }
        }
    }

    #[test]
    fn symmetric_psd_and_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..100 {
            let fam = [KernelFamily::RbfArd, KernelFamily::Periodic][trial % 2];
            let q = if fam == KernelFamily::Periodic { 1 } else { 2 };
            let spec = random_spec(fam, q, &mut rng);
            let x = random_inputs(8, q, &mut rng);
            let k = eval_kernel(&spec, &x, &x).unwrap();
            assert!((&k - k.transpose()).norm() <= 1e-12 * k.norm());
            let shifted = &k + DMatrix::identity(8, 8) * 1e-8;
            chol_with_jitter(&shifted, 0.0).unwrap();

            let y = random_inputs(5, q, &mut rng);
            let c = rng.random_range(-3.0..3.0);
            let xs = x.map(|v| v + c);
            let ys = y.map(|v| v + c);
            let a = eval_kernel(&spec, &x, &y).unwrap();
            let b = eval_kernel(&spec, &xs, &ys).unwrap();
            // Exact up to the rounding of the shifted inputs themselves.
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn relevances_follow_inverse_square_lengthscales() {
        let k = KernelSpec::rbf_ard(1.0, &[1.0, 2.0]).unwrap();
        let w = k.ard_weights();
        assert!((w[1] - w[0] / 4.0).abs() < 1e-15);
        assert_eq!(k.relevances()[0], 1.0);
        let single = KernelSpec::rbf_ard(1.0, &[3.7]).unwrap();
        assert_eq!(single.relevances(), vec![1.0]);
    }
}
