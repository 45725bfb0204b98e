use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;
mod selftest;

#[derive(Debug)]
pub enum CliError {
    /// Bad input or configuration; exit code 2.
    Usage(String),
    /// Anything else; exit code 1.
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<ssa_mpc::Error> for CliError {
    fn from(e: ssa_mpc::Error) -> Self {
        use ssa_mpc::Error as E;
        match e {
            E::Config(_) | E::Argument(_) | E::InsufficientData { .. } | E::Dimension(_) => CliError::Usage(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

/// Bootstrapped SSA obstacle forecasting and risk-aware MPC experiments.
#[derive(Debug, Parser)]
#[command(name = "ssa-mpc", version)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ScenarioArgs {
    /// Scenario TOML file, or one of the bundled names case1, case2, case3.
    #[arg(long, default_value = "case1")]
    pub scenario: String,
    /// Override a scenario key, e.g. `--set planner.horizon=10`; applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Base seed; overrides the scenario file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bootstrap forecast of a measured x,y,z series.
    Forecast {
        /// CSV with x, y and z columns (other columns are ignored).
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// One closed-loop episode.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Run index within the seed.
        #[arg(long, default_value_t = 0)]
        run: u64,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Matched Monte-Carlo runs over several risk levels.
    Montecarlo {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Comma-separated risk levels in (0, 1].
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.25, 0.5, 1.0])]
        epsilon: Vec<f64>,
        /// Parallel episodes; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write every episode's trajectory CSV.
        #[arg(long)]
        dump_trajectories: bool,
    },
    /// Check the QP solver on random problems.
    SolverSelftest {
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Repeat a run recorded in a manifest and compare artifact hashes.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "rerun")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Forecast { input, scenario, out } => commands::forecast(&input, &scenario, &out),
        Command::Simulate { scenario, run, epsilon, out } => commands::simulate(&scenario, run, epsilon, &out),
        Command::Montecarlo { scenario, runs, epsilon, jobs, out, dump_trajectories } => {
            commands::montecarlo(&scenario, runs, &epsilon, jobs, &out, dump_trajectories)
        }
        Command::SolverSelftest { cases, seed } => selftest::run(cases, seed),
        Command::Rerun { manifest, out } => manifest::rerun(&manifest, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
