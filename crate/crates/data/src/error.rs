use editlab_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid scene configuration: {0}")]
    Config(String),
    #[error("edit contract violated: {0}")]
    Contract(String),
    #[error("instruction does not parse: {0}")]
    Grammar(String),
    #[error("malformed dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("dataset file error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
