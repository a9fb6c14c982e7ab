use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("value error: {0}")]
    Value(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
