//! Low-rank-plus-diagonal Gaussian model shared by the sparse samplers.
//!
//! Covariance `C = U Kuu⁻¹ Uᵀ + D` with `D = diag(noise + kff − q)`, where
//! `q = diag(U Kuu⁻¹ Uᵀ)`. Every solve goes through `A = Kuu + Uᵀ D⁻¹ U`,
//! so the cost is O(n m²).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{chol_default, symmetrize, PsdFactor};

use super::{CovarianceMode, SampledCovariance};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub(crate) struct LowRank {
    u: DMatrix<f64>,
    kuu_f: PsdFactor,
    kuu_j: DMatrix<f64>,
    a_f: PsdFactor,
    d: DVector<f64>,
    // A⁻¹ Uᵀ D⁻¹ y
    c: DVector<f64>,
    value: f64,
}

pub(crate) struct LowRankAdjoint {
    pub u: DMatrix<f64>,
    pub kuu: DMatrix<f64>,
    pub kff: DVector<f64>,
    pub noise: DVector<f64>,
}

impl LowRank {
    pub fn new(
        u: DMatrix<f64>,
        kuu: &DMatrix<f64>,
        kff: &DVector<f64>,
        noise: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<Self> {
        let n = u.nrows();
        let kuu_f = chol_default(&symmetrize(kuu))?;
        let v = kuu_f.solve_lower(&u.transpose());
        // kff − q is non-negative up to rounding; it is left unclamped so the
        // adjoint stays exact.
        let d = DVector::from_fn(n, |i, _| noise[i] + kff[i] - v.column(i).norm_squared());
        if d.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::NotPositiveDefinite { max_jitter: kuu_f.jitter_applied() });
        }
        let mut ud = u.clone();
        for i in 0..n {
            ud.row_mut(i).scale_mut(1.0 / d[i]);
        }
        let kuu_j = kuu + DMatrix::identity(kuu.nrows(), kuu.nrows()) * kuu_f.jitter_applied();
        let a = &kuu_j + u.transpose() * &ud;
        let a_f = chol_default(&symmetrize(&a))?;
        let b = ud.transpose() * y;
        let c = a_f.solve_vec(&b);
        let quad = y.iter().zip(d.iter()).map(|(yi, di)| yi * yi / di).sum::<f64>() - b.dot(&c);
        let logdet = a_f.logdet() - kuu_f.logdet() + d.iter().map(|x| x.ln()).sum::<f64>();
        let value = -0.5 * (n as f64 * LN_2PI + logdet + quad);
        Ok(LowRank {
            u,
            kuu_f,
            kuu_j,
            a_f,
            d,
            c,
            value,
        })
    }

    pub fn log_likelihood(&self) -> f64 {
        self.value
    }

    pub fn adjoint(&self, y: &DVector<f64>) -> LowRankAdjoint {
        let n = self.u.nrows();
        let u = &self.u;
        let alpha = DVector::from_fn(n, |i, _| (y[i] - (u.row(i) * &self.c)[0]) / self.d[i]);
        let kuu_inv = self.kuu_f.inverse();
        // C⁻¹U = D⁻¹ U A⁻¹ Kuu
        let ua = self.a_f.solve(&u.transpose()).transpose();
        let mut cinv_u = &ua * &self.kuu_j;
        for i in 0..n {
            cinv_u.row_mut(i).scale_mut(1.0 / self.d[i]);
        }
        let g_diag = DVector::from_fn(n, |i, _| {
            let uau = ua.row(i).dot(&u.row(i));
            let cinv_ii = 1.0 / self.d[i] - uau / (self.d[i] * self.d[i]);
            0.5 * (alpha[i] * alpha[i] - cinv_ii)
        });
        let alpha_u = u.transpose() * &alpha;
        let mut gt_u = (&alpha * alpha_u.transpose() - cinv_u) * 0.5;
        for i in 0..n {
            let gi = g_diag[i];
            let ui = u.row(i) * gi;
            gt_u.row_mut(i).zip_apply(&ui, |a, b| *a -= b);
        }
        let d_u = &gt_u * &kuu_inv * 2.0;
        let d_kuu = symmetrize(&(-(&kuu_inv * u.transpose() * &gt_u * &kuu_inv)));
        let d_kff = g_diag.clone();
        LowRankAdjoint {
            u: d_u,
            kuu: d_kuu,
            kff: d_kff,
            noise: g_diag,
        }
    }

    /// Predictive over cells with cross-covariance `k_su` to the inducing
    /// variables and prior covariance `k_ss` (diagonal or full).
    pub fn predict(
        &self,
        k_su: &DMatrix<f64>,
        k_ss: &SampledCovariance,
        prediction_noise: f64,
        mode: CovarianceMode,
    ) -> (DVector<f64>, SampledCovariance) {
        let mean = k_su * &self.c;
        let w1 = self.kuu_f.solve_lower(&k_su.transpose());
        let w2 = self.a_f.solve_lower(&k_su.transpose());
        let ns = k_su.nrows();
        let cov = match mode {
            CovarianceMode::Diagonal => {
                let prior = k_ss.variances();
                SampledCovariance::Diagonal(DVector::from_fn(ns, |j, _| {
                    prior[j] - w1.column(j).norm_squared() + w2.column(j).norm_squared() + prediction_noise
                }))
            }
            CovarianceMode::Full => {
                let prior = match k_ss {
                    SampledCovariance::Full(m) => m.clone(),
                    SampledCovariance::Diagonal(v) => DMatrix::from_diagonal(v),
                };
                let m = prior - w1.transpose() * &w1 + w2.transpose() * &w2 + DMatrix::identity(ns, ns) * prediction_noise;
                SampledCovariance::Full(symmetrize(&m))
            }
        };
        (mean, cov)
    }
}
