//! Error type shared across the crate.

use std::path::PathBuf;

/// Errors produced by model loading, fitting, and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Mismatched vector/matrix dimensions between related objects.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A loaded file violates a structural invariant. `field` names the
    /// offending manifest entry.
    #[error("validation failed for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    /// Input contains NaN or infinite coordinates.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// Too few correspondences to determine a solution.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Input geometry is rank-deficient (collinear/coplanar points).
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    /// A linear system is numerically unsolvable at the requested
    /// regularization level.
    #[error("ill-conditioned system: {0}; increase the regularization weight")]
    IllConditioned(String),

    /// Missing or inconsistent runtime configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// File-system failure with the path that triggered it.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON in a manifest, landmark file, or report.
    #[error("parse error in {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Parse { path: path.into(), source }
    }

    pub fn validation(field: &str, reason: impl Into<String>) -> Self {
        Error::Validation { field: field.to_string(), reason: reason.into() }
    }

    /// True for errors arising from numerical failure rather than bad input.
    /// CLI consumers map this to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::InsufficientData(_)
                | Error::DegenerateConfiguration(_)
                | Error::IllConditioned(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
