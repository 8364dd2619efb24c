//! Experiment runner for `scorelab`: configuration files, checkpoints, IDX
//! ingestion, CSV/PPM export and the `train`, `check`, `encode`, `sample`,
//! `sweep` and `cross-denoise` subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod export;
pub mod idx;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{ConfigError, RunConfig};
pub use idx::{load_idx, IdxError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Core(#[from] scorelab::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// 0 success, 1 validation, 2 numerical failure, 3 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Numerical(_) | Self::Core(scorelab::Error::Numerical(_)) => 2,
            Self::Verification(_) => 3,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "scorelab", version, about = "Score-based representation learning on toy data")]
pub struct Cli {
    /// Run configuration (`key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a score model (and encoder) and write a checkpoint and loss CSV.
    Train,
    /// Gradient, decomposition and sampler checks against analytic oracles.
    Check {
        /// Negative control: flips the sign of the reference marginal score.
        #[arg(long, hide = true)]
        sabotage: bool,
    },
    /// Write latent codes of the configured dataset.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Export code means instead of sampled codes.
        #[arg(long)]
        export_mean: bool,
    },
    /// Generate samples conditioned on a latent grid or a codes file.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grid steps per axis (d_z = 2 only).
        #[arg(long, conflicts_with = "codes")]
        grid: Option<usize>,
        /// Grid range `LO,HI`.
        #[arg(long, default_value = "-2,2", allow_hyphen_values = true)]
        range: String,
        /// CSV of codes, one per line (an optional header line is skipped).
        #[arg(long)]
        codes: Option<PathBuf>,
        /// Samples per code.
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Reverse-SDE steps; defaults to the config's `sample_steps`.
        #[arg(long)]
        n_steps: Option<usize>,
        /// Also write a PPM scatter plot of the first two coordinates.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Image size `WIDTHxHEIGHT`.
        #[arg(long, default_value = "256x256")]
        resolution: String,
    },
    /// Silhouette-vs-t or diversity-vs-d_z sweep with resumable cells.
    Sweep {
        /// Training times for a silhouette sweep, e.g. `0.1,0.5,0.9`.
        #[arg(long, value_delimiter = ',', conflicts_with = "dz_values")]
        t_values: Option<Vec<f64>>,
        /// Latent dimensions for a diversity sweep, e.g. `1,2,4,8`.
        #[arg(long, value_delimiter = ',')]
        dz_values: Option<Vec<usize>>,
        /// Overrides the config's `runs`.
        #[arg(long)]
        runs: Option<usize>,
        /// Stop after computing this many new cells (interruption testing).
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Denoise perturbations of one point while conditioning on another
    /// point's code.
    CrossDenoise {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Time at which reverse sampling starts.
        #[arg(long, default_value_t = 0.5)]
        t_start: f64,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        /// Steps for the full horizon; scaled down to the `t_start` span.
        #[arg(long)]
        n_steps: Option<usize>,
    },
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    let base = match &cli.config {
        Some(p) => Some(RunConfig::load(p)?),
        None => None,
    };
    let overrides = commands::Overrides {
        config: base,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Train => commands::train(&overrides.resolve(None)?),
        Command::Check { sabotage } => commands::check(&overrides.resolve(None)?, sabotage),
        Command::Encode { checkpoint, export_mean } => commands::encode(&overrides, &checkpoint, export_mean),
        Command::Sample {
            checkpoint,
            grid,
            range,
            codes,
            k,
            n_steps,
            image,
            resolution,
        } => commands::sample(
            &overrides,
            &checkpoint,
            &commands::SampleArgs {
                grid,
                range,
                codes,
                k,
                n_steps,
                image,
                resolution,
            },
        ),
        Command::Sweep {
            t_values,
            dz_values,
            runs,
            stop_after,
        } => commands::sweep(&overrides.resolve(None)?, t_values, dz_values, runs, stop_after),
        Command::CrossDenoise {
            checkpoint,
            t_start,
            pairs,
            n_steps,
        } => commands::cross_denoise(&overrides, &checkpoint, t_start, pairs, n_steps),
    }
}

/// Parses `args` (including the program name) and runs them, returning the
/// process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
