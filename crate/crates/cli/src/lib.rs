//! Command-line front end: dataset generation, training, fine-tuning,
//! inference, evaluation and previews.

mod commands;
pub mod config;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hifreq_train::TrainError;
use hifreq_unet::UnetError;
use thiserror::Error;

pub use commands::run;
pub use config::{ExperimentConfig, Preset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_DATA: i32 = 3;

pub const THREADS_ENV: &str = "HIFREQ_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl CliError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Data(_) => EXIT_DATA,
            CliError::Train(e) if e.is_io() => EXIT_IO,
            CliError::Train(_) => EXIT_DATA,
        }
    }
}

impl From<UnetError> for CliError {
    fn from(e: UnetError) -> Self {
        CliError::Train(e.into())
    }
}

impl From<hifreq_core::io::IoError> for CliError {
    fn from(e: hifreq_core::io::IoError) -> Self {
        CliError::Train(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "hifreq", version, about = "High-frequency depth recovery from shading")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config file; defaults to the desk preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in configuration, used instead of a config file.
    #[arg(long, global = true, value_enum, conflicts_with = "config")]
    pub preset: Option<Preset>,
    /// Replaces the dataset and training seeds of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to a subdirectory of the config's out_dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    All,
}

impl SplitArg {
    pub fn split(self) -> Option<hifreq_train::dataset::Split> {
        use hifreq_train::dataset::Split;
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the resolved configuration as TOML.
    Config,
    /// Render, sample and densify a synthetic dataset.
    Gen {
        /// Number of scenes; defaults to dataset.count.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a network from scratch.
    Train {
        /// Dataset directory or manifest.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Continue training a saved network on another dataset.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        /// Starting weights.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write predicted depth maps for a dataset.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
    },
    /// Compare models against the low-frequency baseline.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Model weights, as `path` or `name=path`; repeatable.
        #[arg(long)]
        checkpoint: Vec<String>,
        /// Also score a predictor that returns the ground truth.
        #[arg(long)]
        oracle: bool,
        #[arg(long, value_enum, default_value_t = SplitArg::Val)]
        split: SplitArg,
    },
    /// Render one scene and write PNG previews of every image.
    RenderPreview {
        /// Scene index under the seed.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

/// Reads `HIFREQ_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
    }
}
