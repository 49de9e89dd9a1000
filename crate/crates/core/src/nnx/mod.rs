//! Desk-scale forward-pass inference engine.

mod config;
mod model;
pub mod ops;
mod tensor;
pub mod weights;

pub use config::ModelConfig;
pub use model::{convnext_block, BlockParams, ForwardOutput, Model};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnxError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("not a weights bundle (bad magic)")]
    BadMagic,
    #[error("unsupported weights format version {0}")]
    VersionUnsupported(u32),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    TensorShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unexpected tensor {0:?}")]
    UnexpectedTensor(String),
    #[error("duplicate tensor {0:?}")]
    DuplicateTensor(String),
    #[error("tensor {0:?} contains non-finite values")]
    NonFiniteTensor(String),
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("weights file truncated: {0}")]
    Truncated(String),
    #[error("{0} trailing bytes after config block")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
