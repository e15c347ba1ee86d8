use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("insufficient data for class `{class}`: need {needed}, have {available}")]
    InsufficientData {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("worker `{worker}` unavailable: {message}")]
    WorkerUnavailable { worker: String, message: String },

    #[error("protocol error{}: {message}", example_id.as_ref().map(|id| format!(" (example `{id}`)")).unwrap_or_default())]
    Protocol {
        example_id: Option<String>,
        message: String,
    },

    #[error("degenerate weights: all worker dev scores are zero")]
    DegenerateWeights,

    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),

    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("model format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// Transport failures against remote workers may succeed on retry.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::WorkerUnavailable { .. })
    }
}
