//! `gridfill`: generate synthetic grid data, recover missing entries and run
//! Monte-Carlo sweeps from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use gridfill_core::bsvt::write_trace_csv;
use gridfill_core::harness::{opta_curve, run_sweep, scenario, write_sweep, ExperimentConfig, Method};
use gridfill_core::io::{read_matrix_csv, read_vector_csv, write_matrix_csv, write_vector_csv};
use gridfill_core::opta::write_opta_csv;
use gridfill_core::{bsvt_recover, lmmse_recover, svt_recover, LmmseModel, NoisyObservations};

#[derive(Parser)]
#[command(name = "gridfill", version, about = "Low-rank and Bayesian recovery of missing grid measurements")]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one state matrix, mask and noisy observation set.
    Generate(GenerateArgs),
    /// Recover a full matrix from an observation file with one method.
    Recover(RecoverArgs),
    /// Run a Monte-Carlo sweep described by a config file.
    Sweep(SweepArgs),
    /// Compute the rate-distortion floor for a config's sweep grid.
    Opta(OptaArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Source, noise and sampling settings; without it a synthetic
    /// 200x200 uniform-sampling setup is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Missing ratio of the drawn mask (defaults to the config's first gamma).
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    method: Method,
    /// Observation file written by `generate`.
    #[arg(long)]
    observations: PathBuf,
    /// Covariance of the postulated model (lmmse and bsvt).
    #[arg(long)]
    covariance: Option<PathBuf>,
    /// Mean of the postulated model (lmmse and bsvt).
    #[arg(long)]
    mean: Option<PathBuf>,
    /// Config whose `svt` / `bsvt` tables set the iteration parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-iteration bsvt trace output.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Estimate CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (all cores when absent).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct OptaArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Bound CSV (defaults to `opta.csv` in the config's output directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config =
        ExperimentConfig::from_file(path).with_context(|| format!("loading config {}", path.display()))?;
    if let Some(seed) = seed {
        config.base_seed = seed;
    }
    Ok(config)
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => load_config(path, args.seed)?,
        None => ExperimentConfig {
            base_seed: args.seed.unwrap_or(0),
            ..ExperimentConfig::new(200, 200, vec![0.5], vec![Method::Bsvt])
        },
    };
    let gamma = match args.gamma {
        Some(g) => g,
        None => *config.gammas.first().context("config has no gamma values")?,
    };
    config.gammas = vec![gamma];
    config.validate()?;
    let source = config.source()?;
    let cell = scenario(&config, &source, 0, 0)?;

    fs::create_dir_all(&args.out)?;
    write_matrix_csv(args.out.join("truth.csv"), cell.truth.values())?;
    cell.observations.mask().write_csv(args.out.join("mask.csv"))?;
    cell.observations.write_csv(args.out.join("observations.csv"))?;
    write_matrix_csv(args.out.join("covariance.csv"), source.covariance())?;
    write_vector_csv(args.out.join("mean.csv"), source.mean())?;
    println!(
        "wrote {}x{} scenario with {} observed entries (gamma={gamma}, noise variance {:.6e}) to {}",
        config.n_rows,
        config.n_cols,
        cell.observations.len(),
        cell.noise_variance,
        args.out.display()
    );
    Ok(())
}

fn recover(args: RecoverArgs) -> Result<()> {
    let obs = NoisyObservations::read_csv(&args.observations)
        .with_context(|| format!("reading {}", args.observations.display()))?;
    let config = match &args.config {
        Some(path) => Some(load_config(path, None)?),
        None => None,
    };
    let model = if args.method.uses_model() {
        let (Some(cov_path), Some(mean_path)) = (&args.covariance, &args.mean) else {
            bail!("{} needs --covariance and --mean", args.method);
        };
        Some(LmmseModel::new(
            read_vector_csv(mean_path)?,
            read_matrix_csv(cov_path)?,
            obs.noise_variance(),
        )?)
    } else {
        None
    };
    if args.trace.is_some() && args.method != Method::Bsvt {
        bail!("--trace is only available for bsvt");
    }

    let (estimate, iterations, converged) = match (args.method, &model) {
        (Method::Lmmse, Some(model)) => (lmmse_recover(&obs, model)?, 1, true),
        (Method::Svt, _) => {
            let cfg = config.map(|c| c.svt).unwrap_or_default();
            let out = svt_recover(&obs, &cfg)?;
            (out.estimate, out.iterations, out.converged)
        }
        (Method::Bsvt, Some(model)) => {
            let cfg = config.map(|c| c.bsvt).unwrap_or_default();
            let out = bsvt_recover(&obs, model, &cfg)?;
            if let Some(path) = &args.trace {
                write_trace_csv(path, &out.trace)?;
            }
            (out.estimate, out.iterations, out.converged)
        }
        _ => unreachable!("model presence checked above"),
    };
    write_matrix_csv(&args.out, estimate.values())?;
    println!(
        "{}: {iterations} iterations, {}; estimate written to {}",
        args.method,
        if converged { "converged" } else { "stopped at the iteration cap" },
        args.out.display()
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut config = load_config(&args.config, args.seed)?;
    if let Some(out) = args.out {
        config.output = out;
    }
    info!(
        "sweeping {} gamma values x {} repeats",
        config.gammas.len(),
        config.repeats
    );
    let output = run_sweep(&config, args.threads)?;
    let files = write_sweep(&config.output, &config, &output)?;
    let failures = output.results.iter().filter(|r| r.failed()).count();
    println!(
        "{} runs ({failures} failed) -> {}, {}, {}",
        output.results.len(),
        files.results.display(),
        files.aggregates.display(),
        files.plot.display()
    );
    if let Some(path) = files.opta {
        println!("rate-distortion floor -> {}", path.display());
    }
    Ok(())
}

fn opta(args: OptaArgs) -> Result<()> {
    let config = load_config(&args.config, args.seed)?;
    let curve = opta_curve(&config, args.threads)?;
    let path = args.out.unwrap_or_else(|| config.output.join("opta.csv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let points: Vec<(f64, f64)> = curve.iter().map(|p| (p.gamma, p.mean)).collect();
    write_opta_csv(&path, &points)?;
    println!("{} points -> {}", points.len(), path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match cli.command {
        Command::Generate(args) => generate(args),
        Command::Recover(args) => recover(args),
        Command::Sweep(args) => sweep(args),
        Command::Opta(args) => opta(args),
    }
}
