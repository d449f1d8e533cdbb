use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum HawkesError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid event series: {0}")]
    InvalidEvents(String),

    #[error("node index {index} out of range for dimension {dim}")]
    NodeOutOfRange { index: usize, dim: usize },

    #[error("model is not stationary (spectral radius {spectral_radius})")]
    NonStationary { spectral_radius: f64 },

    #[error("log of non-positive intensity {value} at event {index}")]
    LogDomain { index: usize, value: f64 },

    #[error("empty event series")]
    EmptySeries,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("brute-force evaluation capped at {cap} events, got {n}")]
    CapExceeded { n: usize, cap: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: timestamp {value} does not increase on the previous one")]
    NonMonotonic { line: usize, value: f64 },

    #[error("invalid tying scheme: {0}")]
    Tying(String),

    #[error("objective is not finite at the initial point")]
    NonFiniteInit,

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for HawkesError {
    fn from(e: std::io::Error) -> Self {
        HawkesError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HawkesError>;
