//! Command-line front end: `simulate`, `sweep` and `bounds`.
//!
//! Exit codes: 0 on success, 2 when the scenario or arguments are invalid,
//! 3 when a run fails.

pub mod commands;
pub mod scenario;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{EveSummary, Report, SweepRow};
pub use scenario::{Format, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<cvqkd_core::Error> for CliError {
    fn from(e: cvqkd_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "cvqkd", version, about = "Continuous-variable QKD sessions, sweeps and security bounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file (TOML).
    pub scenario: PathBuf,
    /// Overrides `session.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `session.n_slots`.
    #[arg(long)]
    pub slots: Option<usize>,
    /// Overrides `output.directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `output.formats`; repeatable.
    #[arg(long, value_enum)]
    pub format: Vec<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundsFormat {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct BoundsSelector {
    /// Agreed Gaussian key error standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Measured narrowness of Bob's conditional distributions.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Measured average inference standard deviation.
    #[arg(long)]
    pub dinf: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one session and write transcript, record and report.
    Simulate(RunArgs),
    /// Run the scenario once per sweep value.
    Sweep(RunArgs),
    /// Print Eve bounds and Gaussian error rates.
    Bounds {
        #[command(flatten)]
        selector: BoundsSelector,
        #[arg(long, value_enum, default_value = "text")]
        format: BoundsFormat,
    },
}

/// Runs a parsed command, writing the summary to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Simulate(args) => commands::simulate(&args, &mut stdout),
        Command::Sweep(args) => commands::sweep(&args, &mut stdout),
        Command::Bounds { selector, format } => commands::bounds(&selector, format, &mut stdout),
    }
}
