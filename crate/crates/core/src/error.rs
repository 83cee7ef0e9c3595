use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data, with a human readable location.
    #[error("{0}")]
    Data(String),

    /// A parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Row width does not match what a model was trained on.
    #[error("feature count mismatch: expected {expected}, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },

    #[error("both classes must be present ({0})")]
    SingleClass(String),

    #[error("sketch eps mismatch: {0} vs {1}")]
    EpsMismatch(f64, f64),

    #[error("graph error: {0}")]
    Graph(String),

    /// One or more scheduled jobs failed; ids are listed in failure order.
    #[error("jobs failed: {}", .0.join(", "))]
    JobsFailed(Vec<String>),

    #[error("run interrupted after {0} jobs")]
    Interrupted(usize),

    #[error("{path}: {source}")]
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
