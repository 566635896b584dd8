//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. The CLI maps error kinds to
//! exit codes: configuration and input problems exit 2, runtime failures
//! exit 1.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or shape mismatch between tensors, targets, or models.
    #[error("shape error: {0}")]
    Shape(String),

    /// A hyperparameter is outside its documented range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// An input value (label, id, probability vector) is invalid.
    #[error("input error: {0}")]
    Input(String),

    /// A binary file is malformed. `offset` is the byte position at which
    /// the problem was detected.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A text file (CSV) is malformed. `line` is 1-based.
    #[error("format error at line {line}: {message}")]
    CsvFormat { line: usize, message: String },

    /// A disk-cache teacher has no stored prediction for an example.
    /// Always fatal: silently substituting the hard target would break
    /// the snapshot/disk strategy equivalence.
    #[error("cache miss: no stored prediction for example {example_id} (cache epoch {epoch})")]
    CacheMiss { example_id: u64, epoch: u32 },

    /// A quantity is undefined at the given inputs (e.g. the rescaling
    /// factor when the ground-truth probability is exactly 1).
    #[error("singularity: {0}")]
    Singularity(String),

    /// Training produced a non-finite loss. Never recovered from.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// Experiment configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code the CLI uses for this error: 2 for usage/config/input
    /// problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_)
            | Error::Parameter(_)
            | Error::Input(_)
            | Error::Format { .. }
            | Error::CsvFormat { .. }
            | Error::Config(_) => 2,
            Error::CacheMiss { .. }
            | Error::Singularity(_)
            | Error::NonFiniteLoss { .. }
            | Error::Io(_) => 1,
        }
    }
}
