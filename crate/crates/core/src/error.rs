use thiserror::Error;

/// Errors produced anywhere in the optimization stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration. Carries the offending field path.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    /// Gram matrix could not be factorized even after the largest jitter.
    #[error("cholesky factorization failed after jitter {max_jitter:e} (n = {size}, diagonal range [{min_diag:e}, {max_diag:e}])")]
    Factorization {
        size: usize,
        max_jitter: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("non-finite measurement at output {index}: {value}")]
    Measurement { index: usize, value: f64 },

    #[error("candidate {candidate} is not tracked for context {context}")]
    Lookup { context: usize, candidate: usize },

    #[error("acquisition optimization failed: {0}")]
    Optimization(String),

    #[error("environment fault: {0}")]
    Environment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
