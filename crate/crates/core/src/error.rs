use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid format: {0}")]
    InvalidFormat(String),

    #[error("unknown scheme `{name}`; known element formats: {known}")]
    UnknownScheme { name: String, known: String },

    #[error("non-finite input value at block {block}")]
    NonFiniteInput { block: usize },

    #[error("element code {code:#x} does not fit in {bits} bits")]
    MalformedCode { code: u32, bits: u32 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated stream: need {needed} bytes, have {available}")]
    TruncatedStream { needed: u64, available: u64 },

    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),

    #[error("compression factor {factor} leaves no room for any element")]
    CompressionFactorTooHigh { factor: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("tensor parallel degree must be at least 2, got {0}")]
    MinimumDegreeTwo(usize),

    #[error("candidate grid is empty")]
    EmptyGrid,

    #[error("evaluator failed for {candidate}: {reason}")]
    EvaluatorFailure { candidate: String, reason: String },

    #[error("transport failure: {0}")]
    TransportFailure(String),

    #[error("workers {a} and {b} reduced to different tensors")]
    ResultMismatch { a: usize, b: usize },

    #[error("worker {index}: {source}")]
    Worker {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_worker(self, index: usize) -> Self {
        Error::Worker {
            index,
            source: Box::new(self),
        }
    }

    pub fn at_path(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
