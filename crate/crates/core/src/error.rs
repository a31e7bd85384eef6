//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MrfError>;

#[derive(Debug, Error)]
pub enum MrfError {
    /// A value lies outside the domain of a transform (e.g. log of a non-positive number).
    #[error("domain error at index {index}: {message}")]
    Domain { index: usize, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("column `{column}` has zero variance")]
    ZeroVariance { column: String },

    #[error(
        "normal equations are singular for a {k}-parameter linear part; \
         raise the ridge penalty (lambda) or the minimum leaf fraction (MLF)"
    )]
    RankDeficient { k: usize },

    #[error("column schema mismatch: missing {missing:?}, unexpected {unexpected:?}")]
    Schema {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown data-generating process `{0}`")]
    UnknownDgp(String),

    #[error("requested quantity unavailable: {0}")]
    Unavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MrfError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        MrfError::Argument(msg.into())
    }
}
