use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("annotation has no \"end\" marker")]
    MissingEnd,

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("unsupported sample rate {0} Hz (expected 16000)")]
    UnsupportedRate(u32),

    #[error("audio format error: {0}")]
    Format(String),

    #[error("alignment infeasible: {tokens} tokens cannot fit in {frames} frames")]
    InfeasibleAlignment { tokens: usize, frames: usize },

    #[error("window [{start}, {end}] does not intersect the song")]
    EmptyWindow { start: f64, end: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
