use thiserror::Error;

/// Errors produced anywhere in the uncertainty toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero vector cannot be normalized")]
    ZeroVector,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),

    #[error("malformed backend response: {0}")]
    MalformedResponse(String),

    #[error("authentication failed: {0}")]
    AuthFailure(String),

    #[error("generation refused: {0}")]
    GenerationRefused(String),

    #[error("request timed out: {0}")]
    Timeout(String),

    #[error("request budget exhausted after {0} requests")]
    BudgetExhausted(u64),

    #[error("missing video: {0}")]
    MissingVideo(String),

    #[error("missing accuracy for task(s): {}", .0.join(", "))]
    MissingAccuracy(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("too few latents survived: {survived} of {total} (need {needed})")]
    TooFewLatents {
        survived: usize,
        total: usize,
        needed: usize,
    },

    #[error("non-finite log-density at sample {0}")]
    NonFiniteLogDensity(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image decode error: {0}")]
    Image(String),
}

impl Error {
    /// Whether retrying the same request could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::BackendUnreachable(_) | Error::Timeout(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
