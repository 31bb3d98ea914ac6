//! Crate-wide error type.
//!
//! Errors split into three families that the CLI maps onto exit codes:
//! dimension/validation problems (exit 1) and I/O failures (exit 2).

use thiserror::Error;

/// Errors raised while reading or writing checkpoint files. Each failure mode
/// is distinct so callers can tell corruption apart from version skew.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: expected \"OGAW\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("truncated header: need {needed} bytes, file has {available}")]
    TruncatedHeader { needed: usize, available: usize },
    #[error("malformed header JSON: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: directory needs {needed} bytes, payload has {available}")]
    TruncatedPayload { needed: usize, available: usize },
    #[error("directory entries {first} and {second} overlap or are out of order")]
    OverlappingEntries { first: String, second: String },
    #[error("directory entry {name}: byte length {bytes} does not match shape {shape:?} of {dtype}")]
    EntrySizeMismatch {
        name: String,
        bytes: usize,
        shape: Vec<usize>,
        dtype: String,
    },
    #[error("parameter {0} missing from checkpoint directory")]
    MissingParameter(String),
    #[error("checkpoint contains unknown parameter {0}")]
    UnknownParameter(String),
}

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents disagree with what an operation requires.
    #[error("dimension mismatch: {0}")]
    Dim(String),
    /// Input fails a precondition (bad label, odd length, unparsable file...).
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                other => Error::Invalid(format!("csv: {other:?}")),
            }
        } else {
            Error::Invalid(format!("csv: {e}"))
        }
    }
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Exit code for the CLI contract: 1 for validation-class errors, 2 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
