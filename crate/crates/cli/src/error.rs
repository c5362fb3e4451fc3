//! CLI-level errors, wrapping the analysis errors with I/O and parsing
//! failures.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error at {path}:{line}: {message}")]
    ParseError { path: PathBuf, line: usize, message: String },

    #[error("channel not found: {0}")]
    ChannelNotFound(String),

    #[error("truncated record in {path}: {detail}")]
    TruncatedRecord { path: PathBuf, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pipeline stage '{stage}' failed: {message}")]
    Stage { stage: &'static str, message: String },

    #[error(transparent)]
    Core(#[from] multifract::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type CliResult<T> = Result<T, CliError>;
