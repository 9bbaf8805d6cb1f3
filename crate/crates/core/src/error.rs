use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),

    #[error("failed to decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("manifest row {row} references missing file {path}")]
    ManifestMissingFile { row: usize, path: PathBuf },

    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("class directory `{0}` contains no images")]
    EmptyClass(String),

    #[error("image {path} is {got:?} but the dataset uses {expected:?} (H, W, C)")]
    NonUniformImage {
        path: PathBuf,
        got: (usize, usize, usize),
        expected: (usize, usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("class `{class}` has {count} samples, need more than K = {k}")]
    ClassTooSmall { class: String, count: usize, k: usize },

    #[error("unsupported encoder configuration: {0}")]
    UnsupportedConfig(String),

    #[error("non-finite loss at step {step} (epoch {epoch}, lr {lr}): {loss}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        lr: f64,
        loss: f64,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
