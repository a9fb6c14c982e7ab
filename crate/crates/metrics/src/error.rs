use editlab_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    /// The metric has no value for this input (too few frames, empty set).
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("invalid metric configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
