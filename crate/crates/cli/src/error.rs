use thiserror::Error;

#[derive(Debug, Error)]
pub enum GwError {
    /// A flag or config value outside what the command accepts.
    #[error("{0}")]
    BadArgs(String),
    #[error("model was trained on {trained} data but got a {actual} scan")]
    SensorKindMismatch { trained: String, actual: String },
    #[error(transparent)]
    Core(#[from] gridwise_core::Error),
    #[error(transparent)]
    Nn(#[from] gridwise_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GwError {
    /// Process exit status: 2 bad arguments, 3 data contract violation, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            GwError::BadArgs(_) => 2,
            GwError::Nn(gridwise_nn::NnError::Divergence { .. }) => 4,
            _ => 3,
        }
    }
}

pub type GwResult<T> = std::result::Result<T, GwError>;
