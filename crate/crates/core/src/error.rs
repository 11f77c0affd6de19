use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AncError>;

#[derive(Debug, Error)]
pub enum AncError {
    /// Inconsistent dimensions, out-of-range parameters and similar setup mistakes.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that does not satisfy an operation's preconditions.
    #[error("input error: {0}")]
    Input(String),

    /// Malformed WAV, tap, or replay file.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The adaptive filter produced a non-finite or runaway tap.
    #[error("numerical divergence at sample {sample}: {detail}")]
    Divergence { sample: usize, detail: String },
}

impl AncError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        AncError::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        AncError::Input(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        AncError::Format {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AncError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            AncError::Config(_) | AncError::Input(_) => 1,
            AncError::Format { .. } | AncError::Io { .. } => 2,
            AncError::Divergence { .. } => 3,
        }
    }
}
