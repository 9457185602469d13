//! Datasets, synthetic generation, density masking, the nearest-neighbour
//! baseline and the reconstruction error.

pub mod benchmark;
pub mod io;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

pub use benchmark::{run_benchmark, BenchmarkCell, BenchmarkTable, Method};

/// Irregularly observed multivariate series on a common time axis.
///
/// Unobserved entries of `values` carry no meaning; loaders store NaN there.
#[derive(Clone, Debug, PartialEq)]
pub struct LongitudinalDataset {
    pub times: Vec<f64>,
    pub values: DMatrix<f64>,
    pub mask: DMatrix<bool>,
    pub dim_names: Vec<String>,
    pub ground_truth: Option<DMatrix<f64>>,
}

impl LongitudinalDataset {
    pub fn new(
        times: Vec<f64>,
        values: DMatrix<f64>,
        mask: DMatrix<bool>,
        dim_names: Vec<String>,
        ground_truth: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = times.len();
        let d = dim_names.len();
        if values.shape() != (n, d) || mask.shape() != (n, d) {
            return Err(Error::DimensionMismatch(format!(
                "{n} times, {d} names, values {:?}, mask {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        if let Some(gt) = &ground_truth {
            if gt.shape() != (n, d) {
                return Err(Error::DimensionMismatch(format!("ground truth {:?}", gt.shape())));
            }
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::DegenerateTime("non-finite time".into()));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::DegenerateTime(format!("times not strictly increasing at {}", w[1])));
        }
        for j in 0..d {
            for i in 0..n {
                if mask[(i, j)] && !values[(i, j)].is_finite() {
                    return Err(Error::InvalidArgument(format!("observed value at ({i}, {j}) is not finite")));
                }
            }
        }
        Ok(LongitudinalDataset {
            times,
            values,
            mask,
            dim_names,
            ground_truth,
        })
    }

    /// Every entry observed, with `values` doubling as ground truth when asked.
    pub fn fully_observed(times: Vec<f64>, values: DMatrix<f64>, ground_truth: Option<DMatrix<f64>>) -> Result<Self> {
        let (n, d) = values.shape();
        let names = default_names(d);
        Self::new(times, values, DMatrix::from_element(n, d, true), names, ground_truth)
    }

    pub fn n_points(&self) -> usize {
        self.times.len()
    }

    pub fn n_dims(&self) -> usize {
        self.dim_names.len()
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn observed_in_dim(&self, d: usize) -> usize {
        self.mask.column(d).iter().filter(|&&m| m).count()
    }

    pub fn density(&self) -> f64 {
        self.observed_count() as f64 / (self.n_points() * self.n_dims()) as f64
    }
}

pub fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("y{j}")).collect()
}

/// Latent curve family of a synthetic set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatentShape {
    /// Sinusoids with unrelated frequencies plus a slow linear trend.
    Aperiodic,
    /// Harmonics of one period, so every latent curve repeats exactly.
    Periodic { period: f64 },
}

/// Fully observed synthetic set with `ground_truth` set; see
/// [`generate_synthetic_with`] for the process.
pub fn generate_synthetic(n_points: usize, n_dims: usize, latent_dim: usize, noise_sd: f64, seed: u64) -> Result<LongitudinalDataset> {
    generate_synthetic_with(n_points, n_dims, latent_dim, noise_sd, LatentShape::Aperiodic, seed)
}

/// Synthetic generator.
///
/// Times are `t_n = 10·n/(N−1)`. Latent curve `q` is
/// `x_q(t) = Σ_k a_qk sin(2π f_qk t / 10 + φ_qk) + b_q (t/10 − ½)` with three
/// components, `f ~ U(0.5, 2.5)`, `a ~ U(0.5, 1)` and `b ~ U(−1, 1)`
/// (periodic sets use harmonics `k/period` of the period instead and no
/// trend). Output `d` is `α_d tanh(Σ_q W_dq x_q(t) / √Q + c_d)` with
/// `W ~ N(0, 1)`, `c ~ U(−0.3, 0.3)`, `α ~ U(1, 2)`, and observations add
/// `N(0, noise_sd²)`.
pub fn generate_synthetic_with(
    n_points: usize,
    n_dims: usize,
    latent_dim: usize,
    noise_sd: f64,
    shape: LatentShape,
    seed: u64,
) -> Result<LongitudinalDataset> {
    if n_points < 2 || n_dims == 0 || latent_dim == 0 {
        return Err(Error::InvalidArgument("synthetic sizes must be positive (at least 2 points)".into()));
    }
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sd {noise_sd}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times: Vec<f64> = (0..n_points).map(|n| 10.0 * n as f64 / (n_points - 1) as f64).collect();

    struct Curve {
        amp: [f64; 3],
        freq: [f64; 3],
        phase: [f64; 3],
        trend: f64,
    }
    let curves: Vec<Curve> = (0..latent_dim)
        .map(|_| {
            let mut c = Curve {
                amp: [0.0; 3],
                freq: [0.0; 3],
                phase: [0.0; 3],
                trend: 0.0,
            };
            for k in 0..3 {
                c.amp[k] = rng.random_range(0.5..1.0);
                c.freq[k] = match shape {
                    LatentShape::Aperiodic => rng.random_range(0.5..2.5),
                    LatentShape::Periodic { period } => 10.0 * (k + 1) as f64 / period,
                };
                c.phase[k] = rng.random_range(0.0..2.0 * PI);
            }
            c.trend = match shape {
                LatentShape::Aperiodic => rng.random_range(-1.0..1.0),
                LatentShape::Periodic { .. } => 0.0,
            };
            c
        })
        .collect();
    let w = DMatrix::from_fn(n_dims, latent_dim, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let offset: Vec<f64> = (0..n_dims).map(|_| rng.random_range(-0.3..0.3)).collect();
    let gain: Vec<f64> = (0..n_dims).map(|_| rng.random_range(1.0..2.0)).collect();

    let x = DMatrix::from_fn(n_points, latent_dim, |n, q| {
        let c = &curves[q];
        let t = times[n];
        let mut v = c.trend * (t / 10.0 - 0.5);
        for k in 0..3 {
            v += c.amp[k] * (2.0 * PI * c.freq[k] * t / 10.0 + c.phase[k]).sin();
        }
        v
    });
    let root_q = (latent_dim as f64).sqrt();
    let truth = DMatrix::from_fn(n_points, n_dims, |n, d| {
        let s: f64 = (0..latent_dim).map(|q| w[(d, q)] * x[(n, q)]).sum();
        gain[d] * (s / root_q + offset[d]).tanh()
    });
    let mut values = truth.clone();
    if noise_sd > 0.0 {
        let normal = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    LongitudinalDataset::fully_observed(times, values, Some(truth))
}

/// Keeps exactly `round(density·N·D)` observed entries.
///
/// Entries are drawn uniformly without replacement, then a repair pass moves
/// entries so that every dimension keeps at least one observation and, when
/// the count allows it (`round(density·N·D) ≥ N`), every time row does too.
pub fn apply_mask(data: &LongitudinalDataset, density: f64, seed: u64) -> Result<LongitudinalDataset> {
    let (n, d) = (data.n_points(), data.n_dims());
    if data.observed_count() != n * d {
        return Err(Error::InvalidArgument("masking needs a fully observed dataset".into()));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::DensityTooLow { density });
    }
    let k = (density * (n * d) as f64).round() as usize;
    if k < d {
        return Err(Error::DensityTooLow { density });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n * d).collect();
    order.shuffle(&mut rng);
    // index = row·D + dim
    let mut observed: Vec<usize> = order[..k].to_vec();
    let mut row_count = vec![0usize; n];
    let mut dim_count = vec![0usize; d];
    for &i in &observed {
        row_count[i / d] += 1;
        dim_count[i % d] += 1;
    }
    let rows_required = k >= n;

    for dim in 0..d {
        if dim_count[dim] > 0 {
            continue;
        }
        let slot = observed
            .iter()
            .position(|&i| dim_count[i % d] > 1)
            .expect("some dimension has a spare entry when k ≥ D");
        let old = observed[slot];
        row_count[old / d] -= 1;
        dim_count[old % d] -= 1;
        let empty_rows: Vec<usize> = (0..n).filter(|&r| row_count[r] == 0).collect();
        let row = if rows_required && !empty_rows.is_empty() {
            empty_rows[rng.random_range(0..empty_rows.len())]
        } else {
            loop {
                let r = rng.random_range(0..n);
                if !observed.contains(&(r * d + dim)) {
                    break r;
                }
            }
        };
        observed[slot] = row * d + dim;
        row_count[row] += 1;
        dim_count[dim] += 1;
    }
    if rows_required {
        for row in 0..n {
            if row_count[row] > 0 {
                continue;
            }
            // move an entry within its dimension so dimension counts hold
            let slot = observed
                .iter()
                .position(|&i| row_count[i / d] > 1)
                .expect("some row has a spare entry when k ≥ N");
            let old = observed[slot];
            row_count[old / d] -= 1;
            observed[slot] = row * d + old % d;
            row_count[row] += 1;
        }
    }

    let mut mask = DMatrix::from_element(n, d, false);
    for &i in &observed {
        mask[(i / d, i % d)] = true;
    }
    debug_assert_eq!(mask.iter().filter(|&&m| m).count(), k);
    Ok(LongitudinalDataset {
        mask,
        ..data.clone()
    })
}

/// Fills each missing cell with the value at the nearest observed time in
/// the same dimension; ties go to the earlier time.
pub fn nn_impute(data: &LongitudinalDataset) -> Result<DMatrix<f64>> {
    let (n, d) = (data.n_points(), data.n_dims());
    let mut out = data.values.clone();
    for j in 0..d {
        let obs: Vec<usize> = (0..n).filter(|&i| data.mask[(i, j)]).collect();
        if obs.is_empty() {
            return Err(Error::EmptyDimension(j));
        }
        for i in 0..n {
            if data.mask[(i, j)] {
                continue;
            }
            let t = data.times[i];
            // first observed index at or after t
            let pos = obs.partition_point(|&o| data.times[o] < t);
            let best = match (pos.checked_sub(1).map(|p| obs[p]), obs.get(pos).copied()) {
                (Some(a), Some(b)) => {
                    if t - data.times[a] <= data.times[b] - t {
                        a
                    } else {
                        b
                    }
                }
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => unreachable!(),
            };
            out[(i, j)] = data.values[(best, j)];
        }
    }
    Ok(out)
}

/// Which cells the error sums over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ErrorScope {
    #[default]
    All,
    /// Only cells hidden by the mask.
    Masked,
}

/// `Σ |predicted − ground_truth|` over the chosen cells.
pub fn reconstruction_error(predicted: &DMatrix<f64>, data: &LongitudinalDataset, scope: ErrorScope) -> Result<f64> {
    let gt = data.ground_truth.as_ref().ok_or(Error::MissingGroundTruth)?;
    if predicted.shape() != gt.shape() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {:?} vs truth {:?}",
            predicted.shape(),
            gt.shape()
        )));
    }
    let mut total = 0.0;
    for j in 0..gt.ncols() {
        for i in 0..gt.nrows() {
            if scope == ErrorScope::Masked && data.mask[(i, j)] {
                continue;
            }
            total += (predicted[(i, j)] - gt[(i, j)]).abs();
        }
    }
    Ok(total)
}
