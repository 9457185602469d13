//! Dense linear-algebra helpers shared by the model code.
//!
//! Everything here works on `nalgebra` dynamic matrices; problem sizes are
//! desk scale so no sparse or iterative paths exist.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative Frobenius asymmetry tolerated by [`chol_with_jitter`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Default ceiling of the jitter ladder, relative to the mean diagonal.
pub const DEFAULT_MAX_JITTER_REL: f64 = 1e-2;

const JITTER_START_REL: f64 = 1e-10;

/// Lower Cholesky factor of `A + jitter·I`.
#[derive(Clone, Debug)]
pub struct PsdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl PsdFactor {
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b` (forward substitution only).
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.chol.l_dirty();
        let mut x = b.clone();
        l.solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn logdet(&self) -> f64 {
        logdet_psd(self)
    }
}

fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm() / norm
}

/// Cholesky factorization with an escalating diagonal jitter.
///
/// Tries jitter 0 first, then `1e-10·mean(diag)` multiplied by ten at each
/// rung, never exceeding `max_jitter`.
pub fn chol_with_jitter(a: &DMatrix<f64>, max_jitter: f64) -> Result<PsdFactor> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "cholesky of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if max_jitter < 0.0 || !max_jitter.is_finite() {
        return Err(Error::InvalidArgument(format!("max_jitter = {max_jitter}")));
    }
    let asym = relative_asymmetry(a);
    if asym > SYMMETRY_TOL || !asym.is_finite() {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(PsdFactor { chol, jitter: 0.0 });
    }
    let n = a.nrows();
    let mean_diag = if n == 0 { 0.0 } else { a.diagonal().mean().abs() };
    let mut jitter = JITTER_START_REL * if mean_diag > 0.0 { mean_diag } else { 1.0 };
    while jitter <= max_jitter {
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(PsdFactor { chol, jitter });
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { max_jitter })
}

/// [`chol_with_jitter`] with the ceiling at `1e-2·mean(diag)`.
pub fn chol_default(a: &DMatrix<f64>) -> Result<PsdFactor> {
    let n = a.nrows().max(1) as f64;
    let mean_diag = a.diagonal().sum().abs() / n;
    chol_with_jitter(a, DEFAULT_MAX_JITTER_REL * mean_diag.max(f64::MIN_POSITIVE))
}

/// `log|A + jitter·I|` from its factor.
pub fn logdet_psd(f: &PsdFactor) -> f64 {
    2.0 * f.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h = {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteEvaluation { index: i });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// `(A + Aᵀ)/2`.
pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `Σ_ij A_ij B_ij`.
pub(crate) fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Relative difference used throughout the gradient checks.
pub fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
