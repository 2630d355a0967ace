//! Error taxonomy shared by every module.
//!
//! The CLI maps these onto process exit codes: parameter/contract errors
//! exit 2, I/O and file-format errors exit 3, numeric/training failures
//! exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed an argument outside the documented domain.
    #[error("parameter error: {0}")]
    Param(String),

    /// An internal contract between stages was violated (shape mismatch,
    /// overlapping index sets, empty input where non-empty is required).
    #[error("contract error: {0}")]
    Contract(String),

    /// A file did not match its declared binary format.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A numeric procedure produced non-finite values or failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training diverged.
    #[error("training error at epoch {epoch}: {message}")]
    Train { epoch: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
