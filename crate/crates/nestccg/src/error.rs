use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by corpus loading, lexicon building, model I/O and
/// training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A text file violated its declared format; `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("category parse error at byte {pos} in {input:?}: {msg}")]
    CategoryParse {
        input: String,
        pos: usize,
        msg: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0}")]
    Invalid(String),

    #[error(
        "training aborted: non-finite loss at epoch {epoch}, step {step}; \
         the learning rate is likely too high, retry with a smaller --lr"
    )]
    NonFiniteLoss { epoch: usize, step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
