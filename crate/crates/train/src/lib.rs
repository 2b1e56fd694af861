//! Dataset assembly, the optimization loop, inference and model comparison.

mod config;
pub mod dataset;
mod infer;
mod patches;
pub mod report;
mod sample;
mod trainer;

use std::path::Path;

use hifreq_core::eval::EvalError;
use hifreq_core::io::IoError;
use hifreq_core::{DepthError, RasterError, SparseError, SynthError, TensorError};
use hifreq_unet::UnetError;
use thiserror::Error;

pub use config::{ResidualScale, ShadingNorm, TrainConfig};
pub use infer::infer;
pub use patches::{augment_luminance, extract_patches, stack_patches, Batch, Patch, MIN_PATCH_COVERAGE};
pub use sample::{make_input, Input, Sample};
pub use trainer::{
    finetune, init_model, prepare_patches, train, validation_loss, EpochRecord, TrainRecord,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("degenerate image: {0}")]
    DegenerateImage(String),
    #[error("patch {patch} does not fit a {width}x{height} image")]
    PatchTooLarge { patch: usize, width: usize, height: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    File(#[from] IoError),
    #[error(transparent)]
    Unet(#[from] UnetError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("csv: {0}")]
    Csv(String),
}

impl TrainError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
        move |source| TrainError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for failures of the file system rather than of the data.
    pub fn is_io(&self) -> bool {
        match self {
            TrainError::Io { .. } | TrainError::File(IoError::Io { .. }) => true,
            TrainError::Unet(UnetError::Io { .. }) => true,
            _ => false,
        }
    }
}
