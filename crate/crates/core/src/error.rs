//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by solver, loss, trainer, and file-format code.
#[derive(Debug, Error)]
pub enum Error {
    /// Two grids/fields that must share a shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A precondition on an argument was violated (non-finite values,
    /// out-of-range hyper-parameters, empty inputs, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The image cannot support the requested pyramid depth.
    #[error("image too small for pyramid depth: {0}")]
    ImageTooSmall(String),

    /// A file did not conform to its declared format. `offset` is the byte
    /// position at which the problem was detected.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A `key = value` config file problem (syntax, unknown key, bad value).
    #[error("config error: {0}")]
    Config(String),

    /// Training aborted because the loss left the floating-point range.
    #[error("non-finite loss at iteration {iteration}: {value}")]
    NonFiniteLoss { iteration: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
