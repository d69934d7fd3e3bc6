use std::path::PathBuf;

use dfl_core::Error as CoreError;
use thiserror::Error;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_CLOBBER: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("refusing to overwrite {} (pass --force)", .0.display())]
    Clobber(PathBuf),

    #[error("cannot write {}: {source}", .path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_VALIDATION,
            CliError::Clobber(_) => EXIT_CLOBBER,
            CliError::Write { .. } => EXIT_RUNTIME,
            CliError::Core(e) => match e {
                CoreError::Parse { .. }
                | CoreError::Manifest { .. }
                | CoreError::Config(_)
                | CoreError::DimensionMismatch { .. }
                | CoreError::Image(_)
                | CoreError::MissingFile(_)
                | CoreError::BadMagic { .. }
                | CoreError::Version { .. }
                | CoreError::Truncated { .. }
                | CoreError::StoreMismatch(_)
                | CoreError::Empty(_) => EXIT_VALIDATION,
                _ => EXIT_RUNTIME,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Clobber(_) => "clobber",
            CliError::Write { .. } => "io",
            CliError::Core(e) => match e {
                CoreError::Io { .. } => "io",
                CoreError::Parse { .. } => "parse",
                CoreError::Manifest { .. } => "manifest",
                CoreError::Config(_) => "config",
                CoreError::DimensionMismatch { .. } => "dimension_mismatch",
                CoreError::Image(_) | CoreError::SampleImage { .. } => "image",
                CoreError::MissingFile(_) => "missing_file",
                CoreError::Backbone(_) => "backbone",
                CoreError::Inference { .. } => "inference",
                CoreError::ZeroEmbedding => "zero_embedding",
                CoreError::Invariant(_) => "invariant",
                CoreError::BadMagic { .. } | CoreError::Version { .. } | CoreError::Truncated { .. } => "format",
                CoreError::StoreMismatch(_) => "store_mismatch",
                CoreError::Empty(_) => "no_samples",
                CoreError::Metric(_) => "metric",
            },
        }
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "code": self.exit_code(),
            "message": self.to_string().replace('\n', " "),
        })
        .to_string()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
