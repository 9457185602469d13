//! Model file: `format_version=1` followed by `key=value` lines.
//!
//! Floats use Rust's `{:?}` formatting, which round-trips exactly, so a
//! reloaded model evaluates bit-identically. Matrices are written as
//! `rows,cols:` followed by the column-major entries.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::{AffineMap, ModelState, SamplerParams, TrainConfig};
use crate::bound::{InducingSet, NoisePrecision};
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::multioutput::{ConvParams, LmcParams};
use crate::variational::{DynamicalPrior, VariationalPosterior};

pub const FORMAT_VERSION: u32 = 1;

fn floats(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn matrix(m: &DMatrix<f64>) -> String {
    format!("{},{}:{}", m.nrows(), m.ncols(), floats(m.iter().copied()))
}

fn kernel_line(k: &KernelSpec) -> String {
    format!("{};{};{}", k.family(), k.input_dim(), floats(k.log_params().iter().copied()))
}

pub fn save_model(state: &ModelState) -> String {
    let mut out = vec![format!("format_version={FORMAT_VERSION}")];
    let mut put = |k: &str, v: String| out.push(format!("{k}={v}"));
    for (k, v) in state.config.to_pairs() {
        put(&format!("config.{k}"), v);
    }
    put("dim_names", state.dim_names.join(","));
    put("kept_dims", state.kept_dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","));
    put(
        "dropped_fill",
        state
            .dropped_fill
            .iter()
            .map(|f| f.map_or("-".to_string(), |v| format!("{v:?}")))
            .collect::<Vec<_>>()
            .join(","),
    );
    put("times", floats(state.times.iter().copied()));
    put("time_scaler", floats([state.time_scaler.offset, state.time_scaler.scale]));
    put("output_offsets", floats(state.output_scalers.iter().map(|s| s.offset)));
    put("output_scales", floats(state.output_scalers.iter().map(|s| s.scale)));
    put("mask", state.mask.iter().map(|&m| if m { '1' } else { '0' }).collect());
    put("imputed", matrix(&state.imputed));
    put("mu_bar", matrix(&state.posterior.mu_bar));
    put("log_lambda", matrix(&state.posterior.log_lambda));
    put("inducing", matrix(&state.inducing.z));
    put("mapping_kernel", kernel_line(&state.mapping_kernel));
    put("dynamical_kernel", kernel_line(state.prior.kernel()));
    put(
        "log_beta",
        format!(
            "{};{}",
            if state.noise.is_shared() { "shared" } else { "per_dimension" },
            floats(state.noise.log_values().iter().copied())
        ),
    );
    match &state.sampler {
        SamplerParams::Lmc(p) => {
            put("sampler", "lmc".into());
            put("sampler.phi", matrix(&p.phi));
            put("sampler.log_task_noise", floats(p.log_task_noise.iter().copied()));
            put(
                "sampler.inducing_times",
                p.inducing_times.as_ref().map_or("-".into(), |z| floats(z.iter().copied())),
            );
        }
        SamplerParams::Conv(p) => {
            put("sampler", "conv".into());
            put("sampler.gains", floats(p.smoothing_gains.iter().copied()));
            put("sampler.log_scales", floats(p.log_smoothing_scales.iter().copied()));
            put("sampler.latent_inputs", floats(p.latent_inputs.iter().copied()));
            put("sampler.log_task_noise", floats(p.log_task_noise.iter().copied()));
            put("sampler.prediction_noise", format!("{:?}", p.prediction_noise));
        }
        SamplerParams::Disabled => put("sampler", "none".into()),
    }
    out.push(String::new());
    out.join("\n")
}

struct Fields(HashMap<String, String>);

impl Fields {
    fn get(&self, k: &str) -> Result<&str> {
        self.0
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Parse(format!("model file lacks {k}")))
    }

    fn floats(&self, k: &str) -> Result<Vec<f64>> {
        parse_floats(self.get(k)?, k)
    }

    fn matrix(&self, k: &str) -> Result<DMatrix<f64>> {
        let s = self.get(k)?;
        let (shape, vals) = s.split_once(':').ok_or_else(|| Error::Parse(format!("{k}: no shape")))?;
        let (r, c) = shape.split_once(',').ok_or_else(|| Error::Parse(format!("{k}: bad shape")))?;
        let bad = |_| Error::Parse(format!("{k}: bad shape"));
        let (r, c): (usize, usize) = (r.parse().map_err(bad)?, c.parse().map_err(bad)?);
        let v = parse_floats(vals, k)?;
        if v.len() != r * c {
            return Err(Error::Parse(format!("{k}: {} entries for {r}x{c}", v.len())));
        }
        Ok(DMatrix::from_column_slice(r, c, &v))
    }

    fn kernel(&self, k: &str) -> Result<KernelSpec> {
        let s = self.get(k)?;
        let parts: Vec<&str> = s.split(';').collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!("{k}: expected family;dim;params")));
        }
        let family: KernelFamily = parts[0].parse()?;
        let dim: usize = parts[1].parse().map_err(|_| Error::Parse(format!("{k}: bad input dim")))?;
        let mut spec = match family {
            KernelFamily::RbfArd => KernelSpec::rbf_ard(1.0, &vec![1.0; dim])?,
            KernelFamily::Periodic => KernelSpec::periodic(1.0, 1.0, 1.0)?,
            KernelFamily::WhiteNoise => KernelSpec::white_noise(1.0, dim)?,
        };
        spec.set_log_params(&parse_floats(parts[2], k)?)?;
        Ok(spec)
    }
}

fn parse_floats(s: &str, k: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|v| v.parse::<f64>().map_err(|_| Error::Parse(format!("{k}: bad number {v:?}"))))
        .collect()
}

pub fn load_model(text: &str) -> Result<ModelState> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.trim() == format!("format_version={FORMAT_VERSION}") => {}
        other => return Err(Error::Parse(format!("unsupported model header {other:?}"))),
    }
    let mut map = HashMap::new();
    for l in lines.filter(|l| !l.trim().is_empty()) {
        let (k, v) = l.split_once('=').ok_or_else(|| Error::Parse(format!("bad line {l:?}")))?;
        map.insert(k.to_string(), v.to_string());
    }
    let f = Fields(map);

    let mut config = TrainConfig::default();
    for key in TrainConfig::KEYS {
        config.set(key, f.get(&format!("config.{key}"))?)?;
    }
    let dim_names: Vec<String> = f.get("dim_names")?.split(',').map(String::from).collect();
    let kept_dims = f
        .get("kept_dims")?
        .split(',')
        .map(|s| s.parse::<usize>().map_err(|_| Error::Parse("kept_dims".into())))
        .collect::<Result<Vec<_>>>()?;
    let dropped_fill = f
        .get("dropped_fill")?
        .split(',')
        .map(|s| match s {
            "-" => Ok(None),
            v => v.parse::<f64>().map(Some).map_err(|_| Error::Parse("dropped_fill".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    let times = f.floats("times")?;
    let ts = f.floats("time_scaler")?;
    if ts.len() != 2 {
        return Err(Error::Parse("time_scaler".into()));
    }
    let time_scaler = AffineMap {
        offset: ts[0],
        scale: ts[1],
    };
    let offs = f.floats("output_offsets")?;
    let scales = f.floats("output_scales")?;
    let output_scalers: Vec<AffineMap> = offs.iter().zip(&scales).map(|(&offset, &scale)| AffineMap { offset, scale }).collect();
    let imputed = f.matrix("imputed")?;
    let n = times.len();
    let dk = kept_dims.len();
    let mask_str = f.get("mask")?;
    if imputed.shape() != (n, dk) || mask_str.len() != n * dk || output_scalers.len() != dk || scales.len() != dk {
        return Err(Error::Parse("inconsistent data shapes in model file".into()));
    }
    if dropped_fill.len() != dim_names.len() {
        return Err(Error::Parse("dropped_fill length".into()));
    }
    let mask_vals: Vec<bool> = mask_str.chars().map(|c| c == '1').collect();
    let mask = DMatrix::from_column_slice(n, dk, &mask_vals);

    let mu_bar = f.matrix("mu_bar")?;
    let log_lambda = f.matrix("log_lambda")?;
    if mu_bar.shape() != log_lambda.shape() || mu_bar.ncols() != n {
        return Err(Error::Parse("posterior shapes".into()));
    }
    let posterior = VariationalPosterior { mu_bar, log_lambda };
    let scaled: Vec<f64> = times.iter().map(|&t| time_scaler.forward(t)).collect();
    let prior = DynamicalPrior::new(&scaled, f.kernel("dynamical_kernel")?)?;
    let inducing = InducingSet::new(f.matrix("inducing")?)?;
    let mapping_kernel = f.kernel("mapping_kernel")?;
    let (kind, lb) = f
        .get("log_beta")?
        .split_once(';')
        .ok_or_else(|| Error::Parse("log_beta".into()))?;
    let lb = parse_floats(lb, "log_beta")?;
    let noise = match kind {
        "shared" if lb.len() == 1 => NoisePrecision::from_log(lb)?,
        "per_dimension" if lb.len() == dk => {
            let mut np = NoisePrecision::per_dimension(&vec![1.0; dk])?;
            np.set_log_values(&lb)?;
            np
        }
        _ => return Err(Error::Parse("log_beta".into())),
    };
    let sampler = match f.get("sampler")? {
        "lmc" => {
            let phi = f.matrix("sampler.phi")?;
            let noise = f.floats("sampler.log_task_noise")?;
            let mut p = LmcParams::new(phi, &noise.iter().map(|v| v.exp()).collect::<Vec<_>>())?;
            p.log_task_noise = DVector::from_vec(noise);
            if f.get("sampler.inducing_times")? != "-" {
                p = p.with_inducing_times(&f.floats("sampler.inducing_times")?)?;
            }
            SamplerParams::Lmc(p)
        }
        "conv" => {
            let gains = f.floats("sampler.gains")?;
            let ls = f.floats("sampler.log_scales")?;
            let ln = f.floats("sampler.log_task_noise")?;
            let exp = |v: &[f64]| v.iter().map(|x| x.exp()).collect::<Vec<_>>();
            let pn: f64 = f
                .get("sampler.prediction_noise")?
                .parse()
                .map_err(|_| Error::Parse("sampler.prediction_noise".into()))?;
            let mut p = ConvParams::new(&gains, &exp(&ls), &f.floats("sampler.latent_inputs")?, &exp(&ln), pn)?;
            p.log_smoothing_scales = DVector::from_vec(ls);
            p.log_task_noise = DVector::from_vec(ln);
            SamplerParams::Conv(p)
        }
        "none" => SamplerParams::Disabled,
        other => return Err(Error::Parse(format!("unknown sampler {other:?}"))),
    };
    Ok(ModelState {
        config,
        posterior,
        prior,
        inducing,
        mapping_kernel,
        noise,
        sampler,
        imputed,
        mask,
        times,
        time_scaler,
        output_scalers,
        kept_dims,
        dim_names,
        dropped_fill,
    })
}
