use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GmkcfError>;

#[derive(Debug, Error)]
pub enum GmkcfError {
    /// Invalid argument or violated precondition.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("kernel construction failed: {0}")]
    Construction(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// The objective became NaN or infinite.
    #[error("solver diverged at iteration {iteration}: {message}")]
    Solver { iteration: usize, message: String },

    #[error("report error: {0}")]
    Report(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GmkcfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GmkcfError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        GmkcfError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
