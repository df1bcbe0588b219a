use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called with arguments that violate its contract
    /// (shape or channel mismatch, out-of-bounds rectangle, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A serialized file is malformed. `field` names the offending field.
    #[error("malformed {field}: {message}")]
    Format {
        field: &'static str,
        message: String,
    },

    #[error("truncated input {what}: expected {expected} bytes, found {actual}")]
    Truncated {
        what: String,
        expected: u64,
        actual: u64,
    },

    /// Two frame sequences that must line up do not.
    #[error("sequences not aligned: {0}")]
    Alignment(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("need at least {required} points, got {actual}")]
    Arity { required: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Precondition(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
