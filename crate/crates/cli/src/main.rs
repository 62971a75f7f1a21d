//! Batch front end for the estimation library.
//!
//! Four commands over TOML model configs and CSV data files:
//!
//! - `simulate` — draw a macro path and repeated micro cross sections at
//!   the calibrated parameter point;
//! - `estimate` — sample the posterior with adaptive (pseudo-marginal)
//!   random-walk Metropolis–Hastings;
//! - `loglik` — tabulate univariate log-likelihood curves over one free
//!   parameter, per method, max-normalized;
//! - `diagnose` — acceptance rate, effective sample size, and split-R̂
//!   for a chain file.
//!
//! Every command that writes data also writes a `manifest.json`
//! recording the package version, the SHA-256 of each input and output
//! file, and every seed and setting, so a run can be reproduced byte for
//! byte. Outputs are independent of `--workers`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crosslik::data;
use crosslik::mcmc::{adaptive_rwmh, diagnostics, MhSettings, PriorSpec};
use crosslik::microdens::MicroDataset;
use crosslik::models::{load_provider, simulate_joint, LikelihoodMethod, ProviderEstimator};

#[derive(Parser)]
#[command(
    name = "crosslik",
    version,
    about = "Simulation and Bayesian estimation for linearized models with repeated micro cross sections"
)]
struct Cli {
    /// Worker threads for likelihood evaluation (default: one per core).
    /// Results are byte-identical for any setting.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate macro and micro data from a model config.
    Simulate(SimulateArgs),
    /// Sample the posterior and write the chain.
    Estimate(EstimateArgs),
    /// Tabulate univariate log-likelihood curves over one parameter.
    Loglik(LoglikArgs),
    /// Report acceptance rate, ESS, and split-R̂ for a chain file.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    #[value(name = "full-info")]
    FullInfo,
    #[value(name = "macro-only")]
    MacroOnly,
    #[value(name = "moments-1")]
    Moments1,
    #[value(name = "moments-2")]
    Moments2,
    #[value(name = "moments-3")]
    Moments3,
}

impl Method {
    fn to_likelihood(self, smoothing_draws: usize) -> LikelihoodMethod {
        match self {
            Method::FullInfo => LikelihoodMethod::FullInfo {
                n_draws: smoothing_draws,
            },
            Method::MacroOnly => LikelihoodMethod::MacroOnly,
            Method::Moments1 => LikelihoodMethod::Moments { order: 1 },
            Method::Moments2 => LikelihoodMethod::Moments { order: 2 },
            Method::Moments3 => LikelihoodMethod::Moments { order: 3 },
        }
    }

    fn name(self) -> &'static str {
        match self {
            Method::FullInfo => "full-info",
            Method::MacroOnly => "macro-only",
            Method::Moments1 => "moments-1",
            Method::Moments2 => "moments-2",
            Method::Moments3 => "moments-3",
        }
    }

    fn needs_micro(self) -> bool {
        !matches!(self, Method::MacroOnly)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Model config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Number of macro periods.
    #[arg(long, default_value_t = 100)]
    horizon: usize,
    /// Micro cross-section periods, comma-separated (e.g. 10,20,30).
    /// Default: every `--micro-every` periods up to the horizon.
    #[arg(long, value_delimiter = ',')]
    micro_times: Vec<usize>,
    /// Cross-section spacing when --micro-times is not given.
    #[arg(long, default_value_t = 10)]
    micro_every: usize,
    /// Records per cross section.
    #[arg(long, default_value_t = 1000)]
    micro_n: usize,
    /// Parameter values to simulate at, comma-separated.
    /// Default: the config's calibrated values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Model config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Macro series CSV.
    #[arg(long = "macro")]
    macro_path: PathBuf,
    /// Micro cross-section CSV (required unless --method macro-only).
    #[arg(long = "micro")]
    micro_path: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::FullInfo)]
    method: Method,
    /// Total chain length, burn-in included.
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    #[arg(long, default_value_t = 1_000)]
    burn_in: usize,
    /// Simulation-smoother draws J per full-information evaluation.
    #[arg(long, default_value_t = 10)]
    smoothing_draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Chain starting point, comma-separated. Default: config init.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    init: Vec<f64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct LoglikArgs {
    /// Model config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Macro series CSV.
    #[arg(long = "macro")]
    macro_path: PathBuf,
    /// Micro cross-section CSV (required by micro methods).
    #[arg(long = "micro")]
    micro_path: Option<PathBuf>,
    /// Methods to tabulate, comma-separated.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::FullInfo, Method::MacroOnly])]
    method: Vec<Method>,
    /// Free parameter to sweep (other parameters stay at the config's
    /// calibrated values).
    #[arg(long)]
    param: String,
    #[arg(long, allow_hyphen_values = true)]
    from: f64,
    #[arg(long, allow_hyphen_values = true)]
    to: f64,
    #[arg(long, default_value_t = 41)]
    points: usize,
    /// Simulation-smoother draws J per full-information evaluation.
    #[arg(long, default_value_t = 10)]
    smoothing_draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Reuse one smoother noise seed at every grid point, removing
    /// estimate noise *differences* along the curve.
    #[arg(long)]
    fix_smoother_seed: bool,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Chain CSV written by `estimate`.
    #[arg(long)]
    chain: PathBuf,
    /// Leading draws to drop before computing diagnostics.
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    /// Also write the JSON report here (it always goes to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if workers == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("worker pool already initialized")?;
    }
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Loglik(args) => cmd_loglik(args),
        Command::Diagnose(args) => cmd_diagnose(args),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let provider = load_provider(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    let times: Vec<usize> = if args.micro_times.is_empty() {
        if args.micro_every == 0 {
            bail!("--micro-every must be at least 1");
        }
        (1..=args.horizon)
            .filter(|t| t % args.micro_every == 0)
            .collect()
    } else {
        args.micro_times.clone()
    };
    if times.is_empty() {
        bail!("no micro periods within the horizon; adjust --micro-every or --micro-times");
    }
    let theta = if args.theta.is_empty() {
        provider.calibrated_theta()
    } else {
        DVector::from_vec(args.theta.clone())
    };

    let sim = simulate_joint(
        provider.as_ref(),
        &theta,
        args.horizon,
        &times,
        args.micro_n,
        args.seed,
    )?;

    fs::create_dir_all(&args.out)?;
    let macro_path = args.out.join("macro.csv");
    data::write_macro_csv(&macro_path, &sim.x)?;
    let names = provider.micro_names();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let micro_path = args.out.join("micro.csv");
    data::write_micro_csv(&micro_path, &sim.micro, &name_refs)?;

    let manifest = json!({
        "command": "simulate",
        "version": env!("CARGO_PKG_VERSION"),
        "model": provider.name(),
        "config": stamp(&args.config)?,
        "theta": theta.iter().copied().collect::<Vec<f64>>(),
        "horizon": args.horizon,
        "micro_times": times,
        "micro_n": args.micro_n,
        "seed": args.seed,
        "outputs": {
            "macro": stamp(&macro_path)?,
            "micro": stamp(&micro_path)?,
        },
    });
    write_manifest(&args.out, &manifest)?;
    println!(
        "wrote {} ({} periods), {} ({} blocks x {} records), manifest.json",
        macro_path.display(),
        args.horizon,
        micro_path.display(),
        times.len(),
        args.micro_n
    );
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let provider = load_provider(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    let (x, micro) = read_inputs(&args.macro_path, args.micro_path.as_deref())?;
    if args.method.needs_micro() && micro.is_none() {
        bail!("--method {} needs --micro", args.method.name());
    }
    let est = ProviderEstimator::new(
        provider.as_ref(),
        &x,
        micro.as_ref(),
        args.method.to_likelihood(args.smoothing_draws),
    )?;

    let init = if args.init.is_empty() {
        provider.init_theta()
    } else {
        DVector::from_vec(args.init.clone())
    };
    let (lower, upper) = provider.param_bounds();
    let mut settings = MhSettings::new(init, PriorSpec::flat_box(lower, upper)?);
    settings.n_draws = args.draws;
    settings.burn_in = args.burn_in;

    let chain = adaptive_rwmh(&est, &settings, args.seed)?;

    fs::create_dir_all(&args.out)?;
    let chain_path = args.out.join("chain.csv");
    data::write_chain_csv(&chain_path, &chain, &provider.param_names())?;

    let manifest = json!({
        "command": "estimate",
        "version": env!("CARGO_PKG_VERSION"),
        "model": provider.name(),
        "config": stamp(&args.config)?,
        "inputs": input_stamps(&args.macro_path, args.micro_path.as_deref())?,
        "method": args.method.name(),
        "draws": args.draws,
        "burn_in": args.burn_in,
        "smoothing_draws": args.smoothing_draws,
        "seed": args.seed,
        "init": chain.draws.row(0).iter().copied().collect::<Vec<f64>>(),
        "acceptance_rate": chain.acceptance_rate(),
        "outputs": { "chain": stamp(&chain_path)? },
    });
    write_manifest(&args.out, &manifest)?;
    println!(
        "wrote {} ({} draws, acceptance rate {:.3}), manifest.json",
        chain_path.display(),
        chain.len(),
        chain.acceptance_rate()
    );
    Ok(())
}

fn cmd_loglik(args: LoglikArgs) -> Result<()> {
    let provider = load_provider(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if args.points < 2 {
        bail!("--points must be at least 2");
    }
    if !(args.from.is_finite() && args.to.is_finite() && args.from < args.to) {
        bail!("--from must be below --to");
    }
    if args.method.is_empty() {
        bail!("--method list is empty");
    }
    let names = provider.param_names();
    let pidx = names
        .iter()
        .position(|n| n == &args.param)
        .with_context(|| format!("config frees {:?}, not {:?}", names, args.param))?;
    let (x, micro) = read_inputs(&args.macro_path, args.micro_path.as_deref())?;
    if args.method.iter().any(|m| m.needs_micro()) && micro.is_none() {
        bail!("micro methods in --method need --micro");
    }

    let base = provider.calibrated_theta();
    let grid: Vec<f64> = (0..args.points)
        .map(|k| args.from + (args.to - args.from) * k as f64 / (args.points - 1) as f64)
        .collect();

    fs::create_dir_all(&args.out)?;
    let curve_path = args.out.join("loglik.csv");
    let mut w = csv::Writer::from_path(&curve_path)?;
    w.write_record(["method", "param", "value", "loglik", "normalized"])?;
    for (m_idx, method) in args.method.iter().enumerate() {
        let mut est = ProviderEstimator::new(
            provider.as_ref(),
            &x,
            micro.as_ref(),
            method.to_likelihood(args.smoothing_draws),
        )?;
        if args.fix_smoother_seed {
            est = est.with_fixed_noise_seed(args.seed);
        }
        let mut curve = Vec::with_capacity(grid.len());
        for (k, &v) in grid.iter().enumerate() {
            let mut theta = base.clone();
            theta[pidx] = v;
            let noise_seed = args
                .seed
                .wrapping_add(m_idx as u64 * 1_000_000)
                .wrapping_add(k as u64);
            let ll = est
                .loglik(&theta, noise_seed)
                .with_context(|| format!("{} likelihood at {} = {v}", method.name(), args.param))?;
            curve.push(ll);
        }
        let top = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (&v, &ll) in grid.iter().zip(&curve) {
            w.write_record([
                method.name().to_string(),
                args.param.clone(),
                v.to_string(),
                ll.to_string(),
                (ll - top).to_string(),
            ])?;
        }
    }
    w.flush()?;

    let manifest = json!({
        "command": "loglik",
        "version": env!("CARGO_PKG_VERSION"),
        "model": provider.name(),
        "config": stamp(&args.config)?,
        "inputs": input_stamps(&args.macro_path, args.micro_path.as_deref())?,
        "methods": args.method.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "param": args.param,
        "from": args.from,
        "to": args.to,
        "points": args.points,
        "smoothing_draws": args.smoothing_draws,
        "seed": args.seed,
        "fix_smoother_seed": args.fix_smoother_seed,
        "outputs": { "loglik": stamp(&curve_path)? },
    });
    write_manifest(&args.out, &manifest)?;
    println!(
        "wrote {} ({} methods x {} points), manifest.json",
        curve_path.display(),
        args.method.len(),
        args.points
    );
    Ok(())
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let (chain, names) = data::read_chain_csv(&args.chain, args.burn_in)?;
    let d = diagnostics(&chain)?;
    let report = json!({
        "chain": args.chain.display().to_string(),
        "n_draws": chain.len(),
        "burn_in": chain.burn_in,
        "kept": chain.len() - chain.burn_in,
        "params": names,
        "acceptance_rate": d.acceptance_rate,
        "ess": d.ess,
        "split_rhat": d.split_rhat,
    });
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(out) = &args.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(out, format!("{text}\n"))?;
    }
    Ok(())
}

/// Reads the macro series and, when given, the micro cross sections.
fn read_inputs(
    macro_path: &Path,
    micro_path: Option<&Path>,
) -> Result<(Vec<DVector<f64>>, Option<MicroDataset>)> {
    let x = data::read_macro_csv(macro_path)
        .with_context(|| format!("reading {}", macro_path.display()))?;
    let micro = match micro_path {
        Some(p) => Some(
            data::read_micro_csv(p)
                .with_context(|| format!("reading {}", p.display()))?
                .0,
        ),
        None => None,
    };
    Ok((x, micro))
}

/// Path plus SHA-256 of the file's bytes, for the manifest.
fn stamp(path: &Path) -> Result<Value> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(json!({ "path": path.display().to_string(), "sha256": hex }))
}

fn input_stamps(macro_path: &Path, micro_path: Option<&Path>) -> Result<Value> {
    let mut inputs = serde_json::Map::new();
    inputs.insert("macro".into(), stamp(macro_path)?);
    if let Some(p) = micro_path {
        inputs.insert("micro".into(), stamp(p)?);
    }
    Ok(Value::Object(inputs))
}

fn write_manifest(out_dir: &Path, manifest: &Value) -> Result<()> {
    let path = out_dir.join("manifest.json");
    fs::write(
        &path,
        format!("{}\n", serde_json::to_string_pretty(manifest)?),
    )?;
    Ok(())
}
