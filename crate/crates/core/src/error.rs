use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for an operator.
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        axis: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint does not match the model: {0}")]
    CheckpointMismatch(String),

    #[error("unsupported audio format: {0}")]
    AudioFormat(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

impl Error {
    pub(crate) fn shape(op: &'static str, axis: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Shape {
            op,
            axis: axis.into(),
            expected,
            got,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 = configuration / usage, 3 = I/O, 4 = numeric abort, 5 = checkpoint mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Manifest { .. } => 3,
            Error::NonFinite(_) => 4,
            Error::Checkpoint(_) | Error::CheckpointMismatch(_) => 5,
            _ => 2,
        }
    }
}
