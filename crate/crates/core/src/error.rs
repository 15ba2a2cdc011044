use std::path::PathBuf;

use crate::choice_model::FitOutcome;
use crate::metrics::Metric;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: scenario has {expected} applicants, predictions have {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("metric {0} is undefined (zero denominator)")]
    UndefinedMetric(Metric),

    #[error("generation failed: {0}")]
    Generation(String),

    /// The optimizer hit its iteration cap. The best iterate found so far is attached.
    #[error(
        "fit did not converge in {} iterations (gradient norm {:.3e})",
        .best.iterations,
        .best.gradient_norm
    )]
    NotConverged { best: Box<FitOutcome> },

    #[error("unsupported bundle format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("bundle validation failed with {} violation(s)", .0.len())]
    Validation(Vec<crate::datastore::Violation>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
