use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{path}: unsupported model file ({reason})")]
    VersionMismatch { path: PathBuf, reason: String },
    #[error("class counts are inconsistent or empty: {0}")]
    DegenerateCounts(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss diverged at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] gridwise_core::Error),
}

pub type NnResult<T, E = NnError> = std::result::Result<T, E>;
