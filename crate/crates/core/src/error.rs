use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid resolutions differ: {target_res} vs {source_res}")]
    ResolutionMismatch { target_res: f64, source_res: f64 },

    #[error("grid geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("patch footprint does not intersect the map")]
    OutOfBounds,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("no drivable path: {0}")]
    NoPath(String),

    #[error("expected a {expected} scan, got {actual}")]
    WrongSensor { expected: String, actual: String },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
