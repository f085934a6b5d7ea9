//! `letf`: growth rates, eigenpairs and optimal leverage from the command line.

mod commands;
mod figures;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use letf_core::Error;

#[derive(Debug, Parser)]
#[command(name = "letf", version, about = "Long-horizon growth rates and optimal leverage for leveraged ETFs")]
pub struct Cli {
    /// JSON problem file: {"model": {...}, "alpha": .., "beta": .., "r": ..}
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output path; CSV goes to stdout when omitted
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Downgrade parameter-bound violations to warnings
    #[arg(long, global = true)]
    pub relax: bool,
    /// Monte Carlo seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalue, eigenfunction family and generator residual
    Eigenpair(PointArgs),
    /// Growth rate at one β or along a grid of β
    Growth(GrowthArgs),
    /// Optimal leverage ratio
    Optimal(OptimalArgs),
    /// Stabilizing Riccati solution for the quadratic model
    Riccati(PointArgs),
    /// Check the analytic growth rate against Monte Carlo
    Verify(VerifyArgs),
    /// Regenerate the optimal-leverage figures (1 or 2)
    Figures {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=2))]
        id: u8,
    },
}

#[derive(Debug, Clone, Args)]
pub struct PointArgs {
    /// Override the config's α
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Override the config's β
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GrowthArgs {
    #[command(flatten)]
    pub point: PointArgs,
    /// Grid of β as lo:hi:step
    #[arg(long, allow_hyphen_values = true)]
    pub betas: Option<String>,
    /// Use the published closed forms where they differ
    #[arg(long)]
    pub published: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OptimalArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Admissible interval for β as lo:hi; unbounded when omitted
    #[arg(long, allow_hyphen_values = true)]
    pub cap: Option<String>,
    #[arg(long)]
    pub published: bool,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Compare against the published closed forms
    #[arg(long)]
    pub published: bool,
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Io(std::io::Error),
    Usage(String),
    VerifyFailed(usize),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_input_error() => 2,
            CliError::Core(_) => 3,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 1,
            CliError::VerifyFailed(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::VerifyFailed(n) => write!(f, "verification failed: {n} check(s) out of tolerance"),
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match commands::run(&cli, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
