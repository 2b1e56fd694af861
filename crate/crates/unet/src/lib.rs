//! Convolutional network used to regress the high-frequency depth residual.

mod checkpoint;
mod gemm;
pub mod layers;
mod loss;
pub mod model;
mod optim;

use hifreq_core::TensorError;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gemm::Real;
pub use loss::{masked_mse, LossValue};
pub use model::{UNet, DEFAULT_PARAM_COUNT, DEFAULT_WIDTH, IN_CHANNELS, SIZE_MULTIPLE};
pub use optim::{Adam, AdamConfig};

#[derive(Debug, Error)]
pub enum UnetError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("pooling needs even sizes, got {height}x{width}")]
    OddSize { height: usize, width: usize },
    #[error("input {height}x{width} is not a multiple of {}", model::SIZE_MULTIPLE)]
    BadSize { height: usize, width: usize },
    #[error("loss mask selects no pixels")]
    EmptyMask,
    #[error("checkpoint does not fit the model: {0}")]
    ArchMismatch(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
