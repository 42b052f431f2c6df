use thiserror::Error;

/// Crate-wide error type.
///
/// The variants map onto the process exit codes used by the `ldbn` binary:
/// usage/validation problems exit 1, file-format problems exit 2 and
/// pretraining non-convergence exits 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An operation was called out of order (e.g. backward without forward).
    #[error("state error: {0}")]
    State(String),

    /// A batch too small to yield normalization statistics.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// NaN or infinity where a finite value is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid argument, configuration value or label.
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed LDBN/LDDS container data. `offset` is the byte position at
    /// which parsing failed.
    #[error("format error at byte {offset}: {what}")]
    Format { offset: u64, what: String },

    /// Pretraining failed to reach the target accuracy within the epoch cap.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub fn degenerate_batch(msg: impl Into<String>) -> Self {
        Error::DegenerateBatch(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(offset: u64, what: impl Into<String>) -> Self {
        Error::Format {
            offset,
            what: what.into(),
        }
    }

    /// Exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format { .. } => 2,
            Error::NonConvergence(_) => 3,
            _ => 1,
        }
    }
}
