//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("empty loss: {0}")]
    EmptyLoss(String),

    #[error("numerical failure: {0}")]
    NonFinite(String),

    #[error("point cloud has no sensor origin")]
    MissingOrigin,

    #[error("no query has support points within the ball radius")]
    EmptySupport,

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for data problems, 3 for numerical
    /// failures. Usage errors (exit 1) are handled at argument parsing.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) | Error::EmptyLoss(_) | Error::EmptySupport => 3,
            _ => 2,
        }
    }
}
