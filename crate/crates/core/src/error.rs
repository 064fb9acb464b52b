use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced across the scoring and estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user configuration (filters, windows, specs read from config).
    #[error("configuration error: {0}")]
    Config(String),

    /// A file could not be parsed; `line` is 1-based.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    /// Numerical domain violation (zero-norm vector, non-positive denominator, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("lookup error: no embedding for id {0:?}")]
    MissingKey(String),

    /// Cross-artifact consistency violation.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// The parameter of interest is not identified by the sample.
    #[error("identification error: {0}")]
    Identification(String),

    /// Inference cannot be performed (too few clusters, no residual dof).
    #[error("inference error: {0}")]
    Inference(String),

    /// A regression or event-study specification is malformed.
    #[error("specification error: {0}")]
    Specification(String),

    #[error("demeaning did not converge after {iterations} iterations (final delta {delta:e})")]
    Convergence { iterations: usize, delta: f64 },

    /// Degenerate statistics (zero variance, too few units for percentiles).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A pipeline stage ran before the stage producing its inputs.
    #[error("missing upstream artifact {}: run `{producer}` first", path.display())]
    MissingArtifact { path: PathBuf, producer: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
