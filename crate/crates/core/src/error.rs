use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cloud of {size} points exceeds the exact solver cap of {cap}; down-sample first")]
    CapacityExceeded { size: usize, cap: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A non-finite value appeared inside a computation.
    #[error("numerical diagnostic: {0}")]
    Diagnostic(String),

    #[error("virtual scan culled every point")]
    DegenerateScan,

    #[error("{path}:{line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), line, msg: msg.into() }
    }
}
