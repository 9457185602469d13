//! Density sweep: mask, fit or impute, predict from time alone, score.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use nalgebra::DMatrix;

use super::{apply_mask, nn_impute, reconstruction_error, ErrorScope, LongitudinalDataset};
use crate::error::{Error, Result};
use crate::trainer::{fit, predict, SamplerKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Nn,
    /// The model with the sampler switched off: missing cells stay at the
    /// dimension means.
    Dgplvm,
    Vgpls,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Nn => "nn",
            Method::Dgplvm => "dgplvm",
            Method::Vgpls => "vgpls",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "nn" => Ok(Method::Nn),
            "dgplvm" => Ok(Method::Dgplvm),
            "vgpls" => Ok(Method::Vgpls),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// One (density, method) cell. `errors` holds the per-seed errors of the
/// seeds that succeeded; `failures` the messages of those that did not.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkCell {
    pub density: f64,
    pub method: Method,
    pub errors: Vec<f64>,
    pub failures: Vec<String>,
}

impl BenchmarkCell {
    pub fn mean(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }

    /// Sample SD (n − 1); 0 for a single seed.
    pub fn sd(&self) -> f64 {
        let n = self.errors.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.errors.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    pub fn failed(&self) -> bool {
        !self.failures.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchmarkTable {
    pub cells: Vec<BenchmarkCell>,
}

impl BenchmarkTable {
    pub fn cell(&self, density: f64, method: Method) -> Option<&BenchmarkCell> {
        self.cells.iter().find(|c| c.density == density && c.method == method)
    }

    /// True when at least one seed of some cell produced an error value.
    pub fn any_success(&self) -> bool {
        self.cells.iter().any(|c| !c.errors.is_empty())
    }

    /// `density,method,mean_error,sd_error,n_seeds`; a cell with any failed
    /// seed reports `FAILED` in both error columns and counts only the
    /// seeds that succeeded.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("density,method,mean_error,sd_error,n_seeds\n");
        for c in &self.cells {
            if c.failed() {
                s.push_str(&format!("{},{},FAILED,FAILED,{}\n", c.density, c.method, c.errors.len()));
            } else {
                s.push_str(&format!("{},{},{},{},{}\n", c.density, c.method, c.mean(), c.sd(), c.errors.len()));
            }
        }
        s
    }
}

fn reconstruct(masked: &LongitudinalDataset, method: Method, cfg: &TrainConfig, seed: u64) -> Result<DMatrix<f64>> {
    match method {
        Method::Nn => nn_impute(masked),
        Method::Dgplvm | Method::Vgpls => {
            let mut c = cfg.clone();
            c.seed = seed;
            if method == Method::Dgplvm {
                c.sampler = SamplerKind::Disabled;
            } else if c.sampler == SamplerKind::Disabled {
                c.sampler = SamplerKind::Lmc;
            }
            let (state, _) = fit(masked, &c)?;
            Ok(predict(&state, &masked.times)?.0)
        }
    }
}

/// Every (density, method, seed) combination. The mask and the fit both use
/// the seed, so all methods at a given (density, seed) see the same mask.
/// Rows follow the order of `densities`, then `methods`.
pub fn run_benchmark(
    data: &LongitudinalDataset,
    densities: &[f64],
    methods: &[Method],
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<BenchmarkTable> {
    if data.ground_truth.is_none() {
        return Err(Error::MissingGroundTruth);
    }
    if densities.is_empty() || methods.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("empty density, method or seed list".into()));
    }
    let mut table = BenchmarkTable::default();
    for &density in densities {
        let masks: Vec<Result<LongitudinalDataset>> = seeds.iter().map(|&s| apply_mask(data, density, s)).collect();
        for &method in methods {
            let mut cell = BenchmarkCell {
                density,
                method,
                errors: Vec::new(),
                failures: Vec::new(),
            };
            for (&seed, masked) in seeds.iter().zip(&masks) {
                let res = match masked {
                    Ok(m) => reconstruct(m, method, cfg, seed).and_then(|p| reconstruction_error(&p, m, ErrorScope::All)),
                    Err(e) => Err(Error::InvalidArgument(e.to_string())),
                };
                match res {
                    Ok(e) => {
                        info!("density {density} {method} seed {seed}: error {e:.3}");
                        cell.errors.push(e);
                    }
                    Err(e) => {
                        warn!("density {density} {method} seed {seed} failed: {e}");
                        cell.failures.push(format!("seed {seed}: {e}"));
                    }
                }
            }
            table.cells.push(cell);
        }
    }
    Ok(table)
}
