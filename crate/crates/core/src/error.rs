use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group: {0}")]
    InvalidGroup(String),

    #[error("trajectory {index}: {message}")]
    InvalidTrajectory { index: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("position {t} out of range (max trajectory length {max_len})")]
    OutOfRange { t: usize, max_len: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
