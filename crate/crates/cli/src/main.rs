//! `refrag`: classify models, build profiles, run the Monte Carlo and PDE
//! routes, and run the acceptance suite.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Errors raised by the front end itself.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] refrag_core::Error),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

/// Exit codes shared by all commands.
pub mod exit {
    pub const OK: u8 = 0;
    pub const VERIFY_FAILED: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const REGIME: u8 = 3;
    pub const NUMERICAL: u8 = 4;
    pub const OUTPUT: u8 = 5;
    pub const BOUNDARY: u8 = 10;
    pub const FAILS: u8 = 11;
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use refrag_core::Error as E;
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Output { .. } => exit::OUTPUT,
            CliError::Core(e) => match e {
                E::Config(_) | E::Domain(_) => exit::CONFIG,
                E::Regime(_) => exit::REGIME,
                E::Quadrature(_) | E::NoConvergence(_) | E::Inversion(_) | E::Cfl { .. } | E::NotConverged(_) => {
                    exit::NUMERICAL
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "refrag", version, about = "Growth-fragmentation with piecewise-linear growth: spectral constants, profile, Monte Carlo and PDE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for Monte Carlo runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Regime, Malthus exponent and power-law exponents (exit 0 strict, 10 boundary, 11 fails).
    Classify,
    /// Writes profile.csv, constants.json and profile.svg.
    Profile,
    /// Runs the Monte Carlo estimators and writes estimates.json.
    Simulate,
    /// Runs the finite-volume solver and writes the time series and final density.
    Pde,
    /// Runs the acceptance suite and writes report.json (exit 1 on failure).
    Verify,
}

fn run(cli: Cli) -> Result<u8, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    let path = cli.config.ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let resolved = config::load(&path, cli.seed, cli.out)?;
    match cli.command {
        Command::Classify => commands::classify(&resolved),
        Command::Profile => commands::profile(&resolved, cli.format.unwrap_or(Format::Csv)),
        Command::Simulate => commands::simulate(&resolved, cli.format.unwrap_or(Format::Json)),
        Command::Pde => commands::pde(&resolved, cli.format.unwrap_or(Format::Csv)),
        Command::Verify => commands::verify(&resolved, cli.format.unwrap_or(Format::Json)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("refrag: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
