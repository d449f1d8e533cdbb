mod config;
mod curves;
mod fit;
mod io;
mod simulate;
mod stats;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

/// Validation failure: reported with exit code 2 before any output is written.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(
    name = "hawkes",
    version,
    about = "Hawkes processes with latency: simulate, fit, describe"
)]
#[command(
    after_help = "Exit codes: 0 success, 1 runtime failure, 2 invalid usage.\n\
Set HAWKES_THREADS to cap the number of worker threads."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate event paths from a model.
    #[command(after_help = simulate::HELP)]
    Simulate(SimulateArgs),
    /// Fit models to event files.
    #[command(after_help = fit::HELP)]
    Fit(FitArgs),
    /// Inter-event statistics and exogeneity ratios.
    #[command(after_help = stats::HELP)]
    Stats(StatsArgs),
    /// Sample fitted kernels for plotting.
    #[command(after_help = curves::HELP)]
    Curves(CurvesArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct ModelArgs {
    /// Model file (key = value: dim, lambda0, alpha, beta, tau).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Baseline rates, one per node.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda0: Option<String>,
    /// Kernel intensities, row-major (target, source).
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    /// Kernel decays, row-major (target, source).
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<String>,
    /// Latency in seconds: one value or a row-major matrix.
    #[arg(long, allow_hyphen_values = true)]
    pub tau: Option<String>,
}

impl ModelArgs {
    fn flags(&self) -> config::ModelFlags {
        config::ModelFlags {
            model: self.model.clone(),
            lambda0: self.lambda0.clone(),
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            tau: self.tau.clone(),
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Config file (key = value); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub end_time: Option<f64>,
    /// Number of paths.
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// thinning | cluster
    #[arg(long)]
    pub method: Option<String>,
    /// plain (one file per path, 1-D only) | long
    #[arg(long)]
    pub format: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Event files or directories of them.
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// plain | long
    #[arg(long)]
    pub format: Option<String>,
    /// Latency in seconds: one value or a row-major matrix.
    #[arg(long, allow_hyphen_values = true)]
    pub latency: Option<String>,
    /// joint | node
    #[arg(long)]
    pub mode: Option<String>,
    /// Node to fit in node mode (0-based); all nodes when absent.
    #[arg(long)]
    pub node: Option<usize>,
    /// Fit one model to the summed likelihood of all inputs.
    #[arg(long)]
    pub pooled: bool,
    /// powell | simplex | global
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_evals: Option<usize>,
    /// Tying file, or `bund` for the 4-node bid/ask preset.
    #[arg(long)]
    pub tying: Option<String>,
    /// Initial model file.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// lower,upper
    #[arg(long)]
    pub lambda0_bounds: Option<String>,
    #[arg(long)]
    pub alpha_bounds: Option<String>,
    #[arg(long)]
    pub beta_bounds: Option<String>,
    /// Keep events in START-END (HH:MM[:SS] or seconds) and rebase to 0.
    #[arg(long)]
    pub session: Option<String>,
    /// Observation horizon in seconds.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// reject | jitter | jitter:<eps>
    #[arg(long)]
    pub dedup: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Event files or directories of them.
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    /// Adds the fraction of inter-event times below this latency.
    #[arg(long)]
    pub latency: Option<f64>,
    #[arg(long)]
    pub session: Option<String>,
    #[arg(long)]
    pub dedup: Option<String>,
    /// Baseline rates, one per series, for exogeneity ratios.
    #[arg(long)]
    pub lambda0: Option<String>,
    /// Event counts overriding those of the inputs.
    #[arg(long)]
    pub n_events: Option<String>,
    /// Session length used by the ratios.
    #[arg(long)]
    pub session_seconds: Option<f64>,
    /// Output directory; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CurvesArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// seconds | latency
    #[arg(long)]
    pub units: Option<String>,
    /// Grid size per curve.
    #[arg(long)]
    pub points: Option<usize>,
    /// Right end of the grid in seconds (default: latency + 5 decay times).
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Single target,source pair; all pairs when absent.
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("HAWKES_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        usage(format!(
            "HAWKES_THREADS must be a positive integer, got '{v}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow::anyhow!(e))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Fit(a) => fit::run(a),
        Command::Stats(a) => stats::run(a),
        Command::Curves(a) => curves::run(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
