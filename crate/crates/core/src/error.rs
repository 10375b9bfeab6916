use thiserror::Error;

pub type Result<T> = std::result::Result<T, ExcoError>;

#[derive(Debug, Error)]
pub enum ExcoError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A quantile threshold left no observation above it.
    #[error("degenerate threshold: {0}")]
    DegenerateThreshold(String),

    #[error("no observation exceeds the norm threshold at quantile {quantile}")]
    EmptyExceedance { quantile: f64 },

    #[error("cannot fit {k} clusters to {available} directions")]
    Infeasible { k: usize, available: usize },

    #[error("invalid direction: {0}")]
    InvalidDirection(String),

    #[error("invalid band: {0}")]
    Band(String),

    #[error("invalid window plan: {0}")]
    InvalidPlan(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ExcoError {
    /// True for failures caused by the data being too thin for the requested
    /// analysis, as opposed to malformed input or I/O.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            ExcoError::DegenerateThreshold(_)
                | ExcoError::EmptyExceedance { .. }
                | ExcoError::Infeasible { .. }
        )
    }
}
