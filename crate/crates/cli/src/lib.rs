//! Command-line driver: loop simulation, full study runs, fitting and
//! reporting.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use handground::haptic_env::StudyAxis;
use handground::kinematics::GroundingMode;
use thiserror::Error;

pub use config::RunConfig;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no sessions found under {}", .0.display())]
    NoSessions(PathBuf),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) | CliError::NoSessions(_) => EXIT_RUNTIME,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

#[derive(Debug, Parser)]
#[command(name = "handground", version, about = "Hand-grounded kinesthetic feedback: simulation, studies and analysis")]
pub struct Cli {
    /// JSON run configuration; built-in defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "HANDGROUND_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    /// Restrict to one grounding mode.
    #[arg(long, global = true)]
    pub mode: Option<GroundingMode>,
    /// Restrict to one study axis.
    #[arg(long, global = true)]
    pub axis: Option<StudyAxis>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the force loop under the configured force profile and write traces.
    Simulate,
    /// Run every configured observer through every selected condition.
    RunStudy,
    /// Fit psychometric functions to session logs.
    Fit {
        /// Session log files or directories (default: <out-dir>/sessions).
        inputs: Vec<PathBuf>,
    },
    /// Summarise fitted conditions as text and JSON.
    Report {
        /// Fit results (default: <out-dir>/fits/fits.json).
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

/// Settings shared by every command after the config file and flags are
/// merged.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub modes: Vec<GroundingMode>,
    pub axes: Vec<StudyAxis>,
}

impl Context {
    pub fn resolve(cli: &Cli) -> Result<Self, CliError> {
        let mut config = match &cli.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        let out_dir = cli.out_dir.clone().unwrap_or_else(|| config.output.dir.clone());
        config.output.dir = out_dir.clone();
        Ok(Self {
            config,
            out_dir,
            modes: cli.mode.map_or_else(|| GroundingMode::ALL.to_vec(), |m| vec![m]),
            axes: cli.axis.map_or_else(|| StudyAxis::ALL.to_vec(), |a| vec![a]),
        })
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Context::resolve(&cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.map_or(0, usize::from))
        .build()
        .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::RunStudy => commands::run_study(&ctx),
        Command::Fit { inputs } => commands::fit(&ctx, &inputs),
        Command::Report { input } => commands::report(&ctx, input.as_deref()),
    })
}
