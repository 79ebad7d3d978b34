//! `tfilter` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Lib(#[from] tfilter::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use tfilter::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Lib(
                E::Dimension(_)
                | E::InvalidParameter(_)
                | E::Parse(_)
                | E::Io(_)
                | E::Csv(_)
                | E::MissingTableEntry { .. }
                | E::MomentsUndefined { .. }
                | E::CovarianceUndefined(_),
            ) => 2,
            CliError::Lib(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tfilter", version, about = "Student's t filtering, smoothing and benchmarks")]
struct Cli {
    /// JSON file whose keys mirror the flag names; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log verbosity (-v, -vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write its trajectory CSV.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Run a filter (and optionally its smoother) and write estimate CSVs.
    #[command(args_override_self = true)]
    Estimate(EstimateArgs),
    /// Compute a table of KLD-optimal scale factors.
    #[command(args_override_self = true)]
    Calibrate(CalibrateArgs),
    /// Monte Carlo comparison of the drone tracking estimators.
    #[command(args_override_self = true)]
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    ScalarWalk,
    Drone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterKind {
    Kf,
    KfClairvoyant,
    T,
    TSimplistic,
    McT,
    GridOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Conservative,
    Kld,
    Moment,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    #[arg(long, value_enum)]
    pub scenario: Scenario,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Last time index L (scalar walk default 15, drone default 150).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Scalar walk: prior, process and measurement dof. Drone: dof assumed by the t filter.
    #[arg(long)]
    pub dof: Option<f64>,
    /// Scalar walk process noise scale.
    #[arg(long)]
    pub q: Option<f64>,
    /// Scalar walk measurement noise scale.
    #[arg(long)]
    pub r: Option<f64>,
    /// Scalar walk measurement offsets as `k:offset`.
    #[arg(long, value_delimiter = ',')]
    pub outliers: Vec<String>,
    /// Drone: disable maneuvers and outliers.
    #[arg(long)]
    pub no_events: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum)]
    pub filter: FilterKind,
    #[arg(long, value_enum, default_value = "conservative")]
    pub strategy: Strategy,
    /// Scale factor table CSV; computed on the fly when absent.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Measurements from a `simulate` CSV instead of simulating with `--seed`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Also run the matching smoother.
    #[arg(long)]
    pub smooth: bool,
    /// Monte Carlo samples per step for `mc-t`.
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    /// Samples per cell when the scale factor table is computed on the fly.
    #[arg(long, default_value_t = 200_000)]
    pub calib_samples: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Smoothed estimates; defaults to `<out>` with a `_smoothed` suffix.
    #[arg(long)]
    pub smooth_out: Option<PathBuf>,
    /// Grid densities of `grid-oracle`; defaults to `<out>` with a `_density` suffix.
    #[arg(long)]
    pub density_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4])]
    pub dims: Vec<usize>,
    /// Source dofs; 1e6 stands in for the Gaussian.
    #[arg(long, value_delimiter = ',', default_values_t = [1e6, 5.0, 4.0])]
    pub dofs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [3.0])]
    pub targets: Vec<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum, default_value = "drone")]
    pub scenario: Scenario,
    #[arg(long, default_value_t = 500)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dof assumed by the t filter.
    #[arg(long, default_value_t = 3.0)]
    pub dof: f64,
    #[arg(long, value_enum, default_value = "kld")]
    pub strategy: Strategy,
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000_000)]
    pub calib_samples: usize,
    #[arg(long)]
    pub no_events: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Benchmark(a) => commands::benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
