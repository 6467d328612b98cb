//! `hawkes-emv`: simulate, fit and evaluate GP-modulated Hawkes processes.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure, 1 I/O failure.

mod commands;
mod error;
mod io;

use clap::{Args, Parser, Subcommand, ValueEnum};
use error::{CliError, CliResult};
use hawkes_emv::Exec;
use std::path::PathBuf;

/// Environment variable capping the number of worker threads.
const THREADS_ENV: &str = "HAWKES_EMV_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "hawkes-emv",
    version,
    about = "GP-modulated Hawkes processes: simulation, fitting and evaluation"
)]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample event sequences from a synthetic case or a truth-spec file.
    Simulate(SimulateArgs),
    /// Fit a model to one or more event files.
    Fit(FitArgs),
    /// Compute metrics of a fitted model on event files.
    Evaluate(EvaluateArgs),
    /// Predict the next event time after a history.
    Predict(PredictArgs),
    /// Write the time-rescaling Q-Q points of a model on one event file.
    Qq(QqArgs),
}

/// Where the ground truth comes from.
#[derive(Args, Debug, Clone, Default)]
struct TruthSource {
    /// Synthetic case 1-4.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    case: Option<u8>,
    /// JSON truth specification.
    #[arg(long, conflicts_with = "case")]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    source: TruthSource,
    /// First seed; sequence k uses seed + k.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of sequences to draw.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    /// GP baseline and GP triggering kernel.
    Emv,
    /// Constant baseline and GP triggering kernel.
    EmvConst,
    /// Parametric exponential Hawkes, maximum likelihood.
    Ph,
    /// Constant baseline and histogram kernel, EM.
    Misd,
}

/// Event files plus their observation window.
#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Event CSV files (one timestamp per line, optional header `t`).
    #[arg(long, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Manifest written by `simulate`; supplies the window and, without --data, the files.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Observation window length.
    #[arg(long)]
    t_end: Option<f64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = Method::Emv)]
    method: Method,
    /// Inducing points for the baseline.
    #[arg(long, default_value_t = 8)]
    mf: usize,
    /// Inducing points for the triggering kernel.
    #[arg(long, default_value_t = 6)]
    mg: usize,
    /// EM iteration cap.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Triggering-kernel support (defaults to the manifest's, else 6).
    #[arg(long)]
    tphi: Option<f64>,
    /// Histogram bins for `misd`.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Seed for hyperparameter re-jitter.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Points per sampled curve.
    #[arg(long, default_value_t = 500)]
    resolution: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Model JSON written by `fit`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated subset of loglik, est_err, qq, pre_acc.
    #[arg(long, value_delimiter = ',', default_value = "loglik")]
    metrics: Vec<String>,
    #[command(flatten)]
    source: TruthSource,
    /// Hit tolerance for pre_acc, in the data's time unit (required for pre_acc).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Monte Carlo draws per prediction.
    #[arg(long, default_value_t = hawkes_emv::eval::DEFAULT_N_MC)]
    n_mc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for report.json and Q-Q files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// History as an event CSV.
    #[arg(long)]
    data: PathBuf,
    /// Use only the first this many events of the history.
    #[arg(long)]
    prefix: Option<usize>,
    #[arg(long, default_value_t = hawkes_emv::eval::DEFAULT_N_MC)]
    n_mc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QqArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::input(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Io(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, exec),
        Command::Fit(a) => commands::fit(&a, exec),
        Command::Evaluate(a) => commands::evaluate(&a, exec),
        Command::Predict(a) => commands::predict(&a, exec),
        Command::Qq(a) => commands::qq(&a),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
