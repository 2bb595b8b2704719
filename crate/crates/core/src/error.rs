use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive semi-definite (factorization failed with jitter {jitter:e})")]
    NotPsd { jitter: f64 },

    #[error("matrix is numerically singular")]
    Singular,

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("index sets overlap at element {0}")]
    OverlappingSets(usize),

    #[error("ground set of size {dim} is too large for enumeration (max {max})")]
    TooLarge { dim: usize, max: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input at line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("no events to sessionize")]
    Empty,

    #[error("user {0} has fewer than 4 sets")]
    TooShort(u64),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("empty item sequence")]
    EmptySequence,

    #[error("empty temporal set")]
    EmptySet,

    #[error("diversity kernel objective degenerated: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("cutoff {n} exceeds ranking length {len}")]
    NTooLarge { n: usize, len: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
