use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// A manifest record violates an invariant. `sample` names the offending sample when one exists.
    #[error("invalid manifest{}: {message}", .sample.as_ref().map(|s| format!(" (sample {s})")).unwrap_or_default())]
    Manifest { sample: Option<String>, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid image: {0}")]
    Image(String),

    #[error("failed to read image for sample {sample}: {message}")]
    SampleImage { sample: String, message: String },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("backbone error: {0}")]
    Backbone(String),

    #[error("inference failed on batch {batch}: {message}")]
    Inference { batch: usize, message: String },

    #[error("degenerate embedding: zero vector")]
    ZeroEmbedding,

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("bad magic {found:?} (expected {expected:?})")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },

    #[error("truncated or oversized file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("store mismatch: {0}")]
    StoreMismatch(String),

    #[error("no samples: {0}")]
    Empty(String),

    #[error("metric undefined: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn manifest(sample: Option<&str>, message: impl Into<String>) -> Self {
        Error::Manifest {
            sample: sample.map(str::to_owned),
            message: message.into(),
        }
    }
}
