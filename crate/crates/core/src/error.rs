use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("coverage error: {uncovered_fraction:.4} of the reference grid is not covered by the source")]
    Coverage { uncovered_fraction: f64 },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("coverage undefined: truth contains no weed")]
    UndefinedCoverage,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("held-out set has {rows} rows; at least 10 are needed for weight optimization")]
    HeldoutTooSmall { rows: usize },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("generation error: {0}")]
    Generation(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Alignment(_) => "alignment",
            Error::Coverage { .. } => "coverage",
            Error::Parameter(_) => "parameter",
            Error::Validation(_) => "validation",
            Error::Fit(_) => "fit",
            Error::Solver(_) => "solver",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::UndefinedCoverage => "undefined_coverage",
            Error::Infeasible(_) => "infeasible",
            Error::HeldoutTooSmall { .. } => "heldout_too_small",
            Error::Integrity(_) => "integrity",
            Error::Generation(_) => "generation",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
