use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("degenerate standardization: std {std:e} is below {threshold:e}")]
    DegenerateStandardization { std: f64, threshold: f64 },

    #[error("invalid kernel: {0}")]
    Kernel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("salt-and-pepper is 2D-only")]
    SaltPepper3d,

    #[error("dimensionality mismatch: image is {image}D, kernel is {kernel}D")]
    DimMismatch { image: usize, kernel: usize },

    #[error("spatial dims {shape:?} must be divisible by {divisor}")]
    Divisibility { shape: Vec<usize>, divisor: usize },

    #[error("empty mask")]
    EmptyMask,

    #[error("missing tensor `{0}` required by a nonzero loss weight")]
    MissingTensor(&'static str),

    #[error("non-finite loss at step {step}: {breakdown}")]
    NonFiniteLoss { step: usize, breakdown: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image format error on {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
