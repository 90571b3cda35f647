use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by parsing, training, indexing and retrieval.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("name is empty after truncation")]
    EmptyName,

    #[error("embedding is a zero vector; cosine distance is undefined")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite {what} in batch {batch} (pair {name_a:?} / {name_b:?})")]
    NonFinite {
        what: &'static str,
        batch: usize,
        name_a: String,
        name_b: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("bad magic bytes: not a {expected} file")]
    BadMagic { expected: &'static str },

    #[error("checksum mismatch: file is corrupt")]
    ChecksumMismatch,

    #[error("truncated or corrupt stream: {0}")]
    Corrupt(String),

    #[error("model fingerprint mismatch: index was built with a different checkpoint")]
    FingerprintMismatch,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
