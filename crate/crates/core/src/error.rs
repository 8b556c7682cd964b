use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid privacy budget: {0}")]
    InvalidBudget(String),
    #[error("Laplace scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("tail threshold must be non-negative, got {0}")]
    InvalidThreshold(f64),
    #[error("invalid snapping configuration: {0}")]
    InvalidSnapping(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("dataset rows are not in canonical order; canonicalize before release")]
    NotCanonical,
    #[error("delta must be positive for the stability-based histogram")]
    ZeroDelta,
    #[error("count threshold k must be at least 1")]
    InvalidDensityThreshold,

    #[error("budget refused for scope `{scope}` on partition `{partition}`: would spend {would_epsilon} of ε={total_epsilon} and {would_delta:e} of δ={total_delta:e}")]
    BudgetExceeded {
        scope: String,
        partition: String,
        would_epsilon: f64,
        would_delta: f64,
        total_epsilon: f64,
        total_delta: f64,
    },
    #[error("scope `{scope}` is already bound to partition `{existing}`, cannot charge it to `{requested}`")]
    ScopeConflict {
        scope: String,
        existing: String,
        requested: String,
    },
    #[error("release log {path}: {message}")]
    ReleaseLog { path: PathBuf, message: String },

    #[error("invalid release plan: {0}")]
    InvalidPlan(String),
    #[error("time bin width {0} does not divide 1440")]
    InvalidBinWidth(u32),
    #[error("time {0} is outside 0..=1439 minutes")]
    InvalidTime(u32),

    #[error("invalid audit input: {0}")]
    InvalidAudit(String),

    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
