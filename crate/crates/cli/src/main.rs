//! `vgpls` command-line runner.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 I/O failure,
//! 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};
use vgpls::data_eval::io::{read_dataset, write_long_csv, write_wide_csv};
use vgpls::data_eval::{generate_synthetic_with, run_benchmark, LatentShape, Method};
use vgpls::trainer::persist::{load_model, save_model};
use vgpls::trainer::{fit, predict, TrainConfig};
use vgpls::Error;

#[derive(Parser)]
#[command(name = "vgpls", version, about = "Variational GP models for sparse longitudinal data")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic set: OUT/data.csv (long) and OUT/truth.csv (wide).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 150)]
        points: usize,
        #[arg(long, default_value_t = 8)]
        dims: usize,
        #[arg(long, default_value_t = 2)]
        latent: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Make every latent curve periodic with this period.
        #[arg(long)]
        period: Option<f64>,
    },
    /// Fit a model: OUT/model.vgpls and OUT/trace.csv.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// One-line file of dimension names for named `dim` columns.
        #[arg(long)]
        dims: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predictive means and variances at new times.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// File with one time per line (an optional `time` header is skipped).
        #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
        times: Option<PathBuf>,
        /// Evenly spaced grid of N times, by default over the training range.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long, requires = "grid")]
        from: Option<f64>,
        #[arg(long, requires = "grid")]
        to: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruction error over densities, methods and seeds.
    Bench {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        dims: Option<PathBuf>,
        /// Wide ground-truth file.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.9,0.7,0.5,0.3,0.1")]
        densities: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "nn,dgplvm,vgpls")]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => 3,
            e if e.is_numerical() => 4,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 3,
        message: format!("{}: {e}", path.display()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

/// Flat `key=value` run configuration. Training keys go to [`TrainConfig`];
/// `data`, `dims`, `truth` and `out` name files, resolved against the
/// config file's directory. Command-line flags take precedence.
#[derive(Default)]
struct RunConfig {
    train: TrainConfig,
    data: Option<PathBuf>,
    dims: Option<PathBuf>,
    truth: Option<PathBuf>,
    out: Option<PathBuf>,
}

fn parse_run_config(text: &str, base: &Path) -> Result<RunConfig, Failure> {
    let mut rc = RunConfig::default();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key=value", ln + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let path = || Some(base.join(value));
        match key {
            "data" => rc.data = path(),
            "dims" => rc.dims = path(),
            "truth" => rc.truth = path(),
            "out" => rc.out = path(),
            _ => rc
                .train
                .set(key, value)
                .map_err(|e| usage(format!("config line {}: {e}", ln + 1)))?,
        }
    }
    rc.train.validate()?;
    Ok(rc)
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            parse_run_config(&read_file(p)?, &base)
        }
    }
}

fn pick(flag: Option<PathBuf>, from_config: Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    flag.or(from_config).ok_or_else(|| usage(format!("no {what} given (flag or config key)")))
}

fn cmd_synth(
    out: &Path,
    points: usize,
    dims: usize,
    latent: usize,
    noise: f64,
    seed: u64,
    period: Option<f64>,
) -> Result<(), Failure> {
    let shape = match period {
        Some(period) if period > 0.0 => LatentShape::Periodic { period },
        Some(p) => return Err(usage(format!("period must be positive, got {p}"))),
        None => LatentShape::Aperiodic,
    };
    let data = generate_synthetic_with(points, dims, latent, noise, shape, seed)?;
    let mut long = Vec::new();
    write_long_csv(&data, &mut long)?;
    let mut wide = Vec::new();
    let truth = data.ground_truth.as_ref().expect("synthetic sets carry their truth");
    write_wide_csv(&data.times, truth, &data.dim_names, &mut wide)?;
    write_file(&out.join("data.csv"), &String::from_utf8_lossy(&long))?;
    write_file(&out.join("truth.csv"), &String::from_utf8_lossy(&wide))?;
    info!("wrote {} observations to {}", data.observed_count(), out.display());
    Ok(())
}

fn cmd_train(data: Option<PathBuf>, dims: Option<PathBuf>, config: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), Failure> {
    let rc = load_run_config(config.as_deref())?;
    let data_path = pick(data, rc.data, "data file")?;
    let out = pick(out, rc.out, "output directory")?;
    let dims = dims.or(rc.dims);
    let dataset = read_dataset(&data_path, dims.as_deref(), None)?;
    info!(
        "{} times, {} dimensions, density {:.3}",
        dataset.n_points(),
        dataset.n_dims(),
        dataset.density()
    );
    match fit(&dataset, &rc.train) {
        Ok((state, trace)) => {
            for d in &trace.dropped_dims {
                warn!("dimension {} dropped (fewer than two observations)", dataset.dim_names[*d]);
            }
            write_file(&out.join("model.vgpls"), &save_model(&state))?;
            write_file(&out.join("trace.csv"), &trace.to_csv())?;
            if let Some(last) = trace.iterations.last() {
                info!("final objective {:.4} after {} iterations", last.total, trace.iterations.len());
            }
            Ok(())
        }
        Err(failure) => {
            write_file(&out.join("trace.csv"), &failure.trace.to_csv())?;
            Err(failure.error.into())
        }
    }
}

fn parse_times(text: &str) -> Result<Vec<f64>, Failure> {
    let mut times = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() || (ln == 0 && s == "time") {
            continue;
        }
        let t: f64 = s.parse().map_err(|_| usage(format!("times line {}: bad number {s:?}", ln + 1)))?;
        if !t.is_finite() {
            return Err(usage(format!("times line {}: non-finite time", ln + 1)));
        }
        times.push(t);
    }
    if times.is_empty() {
        return Err(usage("no prediction times"));
    }
    Ok(times)
}

fn cmd_predict(
    model: &Path,
    times: Option<PathBuf>,
    grid: Option<usize>,
    from: Option<f64>,
    to: Option<f64>,
    out: &Path,
) -> Result<(), Failure> {
    let state = load_model(&read_file(model)?)?;
    let ts = match (times, grid) {
        (Some(p), _) => parse_times(&read_file(&p)?)?,
        (None, Some(n)) => {
            if n == 0 {
                return Err(usage("grid needs at least one point"));
            }
            let lo = from.unwrap_or(state.times[0]);
            let hi = to.unwrap_or(*state.times.last().unwrap());
            if n == 1 {
                vec![lo]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
        }
        (None, None) => unreachable!("clap requires one of --times and --grid"),
    };
    let (mean, var) = predict(&state, &ts)?;
    let mut csv = String::from("time");
    for name in &state.dim_names {
        csv.push_str(&format!(",{name}_mean,{name}_var"));
    }
    csv.push('\n');
    for (i, t) in ts.iter().enumerate() {
        csv.push_str(&t.to_string());
        for d in 0..state.dim_names.len() {
            csv.push_str(&format!(",{},{}", mean[(i, d)], var[(i, d)]));
        }
        csv.push('\n');
    }
    write_file(out, &csv)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    data: Option<PathBuf>,
    dims: Option<PathBuf>,
    truth: Option<PathBuf>,
    densities: &[f64],
    methods: &[String],
    seeds: &[u64],
    config: Option<PathBuf>,
    out: &Path,
) -> Result<(), Failure> {
    let rc = load_run_config(config.as_deref())?;
    let data_path = pick(data, rc.data, "data file")?;
    let truth = pick(truth, rc.truth, "ground-truth file")?;
    let dims = dims.or(rc.dims);
    let methods = methods.iter().map(|m| m.parse::<Method>()).collect::<Result<Vec<_>, _>>()?;
    if let Some(d) = densities.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
        return Err(usage(format!("density {d} outside (0, 1]")));
    }
    let dataset = read_dataset(&data_path, dims.as_deref(), Some(&truth))?;
    let table = run_benchmark(&dataset, densities, &methods, seeds, &rc.train)?;
    write_file(out, &table.to_csv())?;
    if table.any_success() {
        Ok(())
    } else {
        Err(Failure {
            code: 4,
            message: "every benchmark cell failed".into(),
        })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth {
            out,
            points,
            dims,
            latent,
            noise,
            seed,
            period,
        } => cmd_synth(&out, points, dims, latent, noise, seed, period),
        Command::Train { data, dims, config, out } => cmd_train(data, dims, config, out),
        Command::Predict {
            model,
            times,
            grid,
            from,
            to,
            out,
        } => cmd_predict(&model, times, grid, from, to, &out),
        Command::Bench {
            data,
            dims,
            truth,
            densities,
            methods,
            seeds,
            config,
            out,
        } => cmd_bench(data, dims, truth, &densities, &methods, &seeds, config, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
