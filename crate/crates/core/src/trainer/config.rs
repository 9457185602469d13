use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::KernelFamily;
use crate::multioutput::CovarianceMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    Lmc,
    Conv,
    /// No multi-output sampler: missing cells stay at their dimension means.
    Disabled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImputeMode {
    Mean,
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Adam ascent; a step that lowers the objective is rejected and the
    /// step size halved.
    AdaptiveFirstOrder,
    /// L-BFGS with Armijo backtracking.
    QuasiNewton,
}

macro_rules! keyword_enum {
    ($t:ty, $($v:path => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($s => Ok($v),)+
                    other => Err(Error::InvalidArgument(format!(
                        "unknown {} {other:?}", stringify!($t)
                    ))),
                }
            }
        }
    };
}

keyword_enum!(SamplerKind, SamplerKind::Lmc => "lmc", SamplerKind::Conv => "conv", SamplerKind::Disabled => "none");
keyword_enum!(ImputeMode, ImputeMode::Mean => "mean", ImputeMode::Sample => "sample");
keyword_enum!(OptimizerKind, OptimizerKind::AdaptiveFirstOrder => "adam", OptimizerKind::QuasiNewton => "lbfgs");
keyword_enum!(CovarianceMode, CovarianceMode::Diagonal => "diagonal", CovarianceMode::Full => "full");

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub inducing_count: usize,
    pub sampler: SamplerKind,
    pub impute_mode: ImputeMode,
    pub resample_every: usize,
    pub max_outer: usize,
    pub inner_steps: usize,
    pub optimizer: OptimizerKind,
    pub step_size: f64,
    pub convergence_tol: f64,
    pub seed: u64,
    pub dynamical_family: KernelFamily,
    /// Initial dynamical lengthscale, on time rescaled to [0, 1].
    pub dynamical_lengthscale: f64,
    /// Initial period in the data's own time units (periodic kernel only).
    pub dynamical_period: Option<f64>,
    /// Sparse sampler size: LMC inducing times (0 = exact LMC) or the
    /// convolution's latent inputs.
    pub sampler_inducing: usize,
    pub freeze_task_covariance: bool,
    pub covariance_mode: CovarianceMode,
    pub init_beta: f64,
    pub shared_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_dim: 2,
            inducing_count: 15,
            sampler: SamplerKind::Lmc,
            impute_mode: ImputeMode::Sample,
            resample_every: 1,
            max_outer: 30,
            inner_steps: 20,
            optimizer: OptimizerKind::AdaptiveFirstOrder,
            step_size: 0.05,
            convergence_tol: 1e-3,
            seed: 0,
            dynamical_family: KernelFamily::RbfArd,
            dynamical_lengthscale: 0.1,
            dynamical_period: None,
            sampler_inducing: 20,
            freeze_task_covariance: false,
            covariance_mode: CovarianceMode::Diagonal,
            init_beta: 100.0,
            shared_noise: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse::<T>()
        .map_err(|_| Error::InvalidArgument(format!("bad value {v:?} for {key}")))
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "latent_dim",
        "inducing_count",
        "sampler",
        "impute_mode",
        "resample_every",
        "max_outer",
        "inner_steps",
        "optimizer",
        "step_size",
        "convergence_tol",
        "seed",
        "kernel.dynamical.family",
        "kernel.dynamical.lengthscale",
        "kernel.dynamical.period",
        "sampler.inducing_count",
        "sampler.freeze_task_covariance",
        "sampler.covariance",
        "noise.init_beta",
        "noise.shared",
    ];

    /// Sets one dotted key. Unknown keys are an error naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "inducing_count" => self.inducing_count = parse(key, value)?,
            "sampler" => self.sampler = value.parse()?,
            "impute_mode" => self.impute_mode = value.parse()?,
            "resample_every" => self.resample_every = parse(key, value)?,
            "max_outer" => self.max_outer = parse(key, value)?,
            "inner_steps" => self.inner_steps = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "step_size" => self.step_size = parse(key, value)?,
            "convergence_tol" => self.convergence_tol = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "kernel.dynamical.family" => self.dynamical_family = value.parse()?,
            "kernel.dynamical.lengthscale" => self.dynamical_lengthscale = parse(key, value)?,
            "kernel.dynamical.period" => {
                self.dynamical_period = match value.trim() {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "sampler.inducing_count" => self.sampler_inducing = parse(key, value)?,
            "sampler.freeze_task_covariance" => self.freeze_task_covariance = parse(key, value)?,
            "sampler.covariance" => self.covariance_mode = value.parse()?,
            "noise.init_beta" => self.init_beta = parse(key, value)?,
            "noise.shared" => self.shared_noise = parse(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let period = self.dynamical_period.map_or("none".to_string(), |p| format!("{p:?}"));
        [
            ("latent_dim", self.latent_dim.to_string()),
            ("inducing_count", self.inducing_count.to_string()),
            ("sampler", self.sampler.to_string()),
            ("impute_mode", self.impute_mode.to_string()),
            ("resample_every", self.resample_every.to_string()),
            ("max_outer", self.max_outer.to_string()),
            ("inner_steps", self.inner_steps.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("step_size", format!("{:?}", self.step_size)),
            ("convergence_tol", format!("{:?}", self.convergence_tol)),
            ("seed", self.seed.to_string()),
            ("kernel.dynamical.family", self.dynamical_family.to_string()),
            ("kernel.dynamical.lengthscale", format!("{:?}", self.dynamical_lengthscale)),
            ("kernel.dynamical.period", period),
            ("sampler.inducing_count", self.sampler_inducing.to_string()),
            ("sampler.freeze_task_covariance", self.freeze_task_covariance.to_string()),
            ("sampler.covariance", self.covariance_mode.to_string()),
            ("noise.init_beta", format!("{:?}", self.init_beta)),
            ("noise.shared", self.shared_noise.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.latent_dim == 0 || self.inducing_count == 0 {
            return bad("latent_dim and inducing_count must be at least 1");
        }
        if self.resample_every == 0 {
            return bad("resample_every must be at least 1");
        }
        if !(self.step_size > 0.0) || !(self.convergence_tol > 0.0) || !(self.init_beta > 0.0) {
            return bad("step_size, convergence_tol and noise.init_beta must be positive");
        }
        if !(self.dynamical_lengthscale > 0.0) {
            return bad("kernel.dynamical.lengthscale must be positive");
        }
        match self.dynamical_family {
            KernelFamily::RbfArd => {}
            KernelFamily::Periodic => {
                if !self.dynamical_period.is_some_and(|p| p > 0.0) {
                    return bad("a periodic dynamical kernel needs a positive kernel.dynamical.period");
                }
                if self.sampler == SamplerKind::Conv {
                    return Err(Error::UnsupportedKernel(
                        "the convolution sampler needs an rbf dynamical kernel".into(),
                    ));
                }
            }
            KernelFamily::WhiteNoise => return bad("white noise cannot be the dynamical kernel"),
        }
        if self.sampler == SamplerKind::Conv && self.sampler_inducing < 2 {
            return bad("the convolution sampler needs at least 2 latent inputs");
        }
        Ok(())
    }
}
