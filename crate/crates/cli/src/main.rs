//! `fbsm`: solver runs, Monte Carlo simulation and verification from JSON
//! configs, with CSV/JSON artifacts.

mod artifacts;
mod reproduce;
mod run;
mod simulate;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fbsm_core::config::Overrides;

/// Exit statuses. `Failed` is only used by `verify` and `reproduce` when an
/// oracle rejects a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Ok = 0,
    Failed = 1,
    Input = 2,
    Numerical = 3,
    MaxIters = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl std::fmt::Display) -> Self {
        Self { status: Status::Input, message: message.to_string() }
    }

    pub fn numerical(message: impl std::fmt::Display) -> Self {
        Self { status: Status::Numerical, message: message.to_string() }
    }
}

impl From<fbsm_core::io::IoError> for Failure {
    fn from(e: fbsm_core::io::IoError) -> Self {
        Failure::input(e)
    }
}

impl From<fbsm_core::config::ConfigError> for Failure {
    fn from(e: fbsm_core::config::ConfigError) -> Self {
        Failure::input(e)
    }
}

impl From<fbsm_core::lqg::LqgError> for Failure {
    fn from(e: fbsm_core::lqg::LqgError) -> Self {
        use fbsm_core::lqg::LqgError::*;
        match e {
            Invalid(_) | DimensionMismatch(_) | TimeOutOfRange { .. } => Failure::input(e),
            _ => Failure::numerical(e),
        }
    }
}

impl From<fbsm_core::grid::GridError> for Failure {
    fn from(e: fbsm_core::grid::GridError) -> Self {
        use fbsm_core::grid::GridError::*;
        match e {
            Problem(_) | NoMinimizer | DimensionMismatch(_) => Failure::input(e),
            _ => Failure::numerical(e),
        }
    }
}

impl From<fbsm_core::sdesim::SimError> for Failure {
    fn from(e: fbsm_core::sdesim::SimError) -> Self {
        Failure::input(e)
    }
}

impl From<fbsm_core::verify::VerifyError> for Failure {
    fn from(e: fbsm_core::verify::VerifyError) -> Self {
        use fbsm_core::verify::VerifyError::*;
        match e {
            Grid(g) => g.into(),
            Lqg(l) => l.into(),
            _ => Failure::input(e),
        }
    }
}

impl From<fbsm_core::ProblemError> for Failure {
    fn from(e: fbsm_core::ProblemError) -> Self {
        Failure::input(e)
    }
}

#[derive(Parser)]
#[command(name = "fbsm", version, about = "Forward-backward sweep solvers for memory-limited partially observable control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Problem config (JSON with a "family" field).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Solver time step; for the grid family it must divide the horizon.
    #[arg(long)]
    pub dt: Option<f64>,
}

impl Common {
    pub fn overrides(&self) -> Overrides {
        Overrides { dt: self.dt, max_iters: self.max_iters, tol: self.tol, seed: self.seed, paths: self.paths }
    }

    pub fn out(&self) -> Result<PathBuf, Failure> {
        self.out.clone().ok_or_else(|| Failure::input("--out is required"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the LQG sweep on an "lqg" config.
    RunLqg(Common),
    /// Run the grid sweep on an "obstacle-grid" config.
    RunGrid(Common),
    /// Simulate closed-loop paths under a stored controller.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// gains.csv, control.json, a run directory, or "zero".
        #[arg(long)]
        controller: String,
    },
    /// Check the artifacts of a run directory.
    Verify {
        /// Run directory.
        #[arg(long)]
        run: PathBuf,
        /// Where to write verify.json; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs, simulations and verification for both bundled problems.
    Reproduce(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::RunLqg(c) => run::run_lqg(&c, "run-lqg"),
        Command::RunGrid(c) => run::run_grid(&c, "run-grid"),
        Command::Simulate { common, controller } => simulate::simulate(&common, &controller),
        Command::Verify { run, out } => verify::verify(&run, out.as_deref()),
        Command::Reproduce(c) => reproduce::reproduce(&c),
    };
    match result {
        Ok(status) => ExitCode::from(status as u8),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.status as u8)
        }
    }
}
