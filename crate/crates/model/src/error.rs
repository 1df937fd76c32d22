use std::path::PathBuf;

use til_core::TilError;

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] TilError),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("loss became non-finite ({loss}) at step {step}; last finite loss {last_finite:?}")]
    NonFiniteLoss {
        step: u64,
        loss: f64,
        last_finite: Option<f64>,
    },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("weights file: {0}")]
    Weights(#[from] safetensors::SafeTensorError),
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::Core(e) => e.code(),
            ModelError::InvalidConfig(_) => "invalid_config",
            ModelError::NonFiniteLoss { .. } => "non_finite_loss",
            ModelError::Checkpoint { .. } => "bad_checkpoint",
            ModelError::Io { .. } => "io_error",
            ModelError::Json(_) => "json_error",
            ModelError::Weights(_) => "bad_weights",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn checkpoint(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        ModelError::Checkpoint {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
