use std::path::PathBuf;

use thiserror::Error;

use crate::rollout::Rollout;

pub type Result<T, E = GnsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GnsError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index {index} out of range for {len} rows in {op}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("generation error: {0}")]
    Generation(String),

    /// The rollout left the sane region; the partial trajectory is kept for diagnosis.
    #[error("rollout diverged at step {step}: {reason}")]
    Blowup {
        step: usize,
        reason: String,
        partial: Box<Rollout>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl GnsError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GnsError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        GnsError::Json {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics (non-finite values, divergence).
    pub fn is_numeric(&self) -> bool {
        matches!(self, GnsError::Training(_) | GnsError::Blowup { .. })
    }
}
