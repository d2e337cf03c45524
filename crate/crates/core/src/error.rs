use thiserror::Error;

/// Errors raised by queries, solvers and samplers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not positive definite ({context}); condition estimate {condition:.3e}")]
    NotPositiveDefinite { context: String, condition: f64 },

    #[error("design is rank deficient on columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("solver did not converge: {message} (iterations {iterations}, residual {residual:.3e})")]
    NonConvergence {
        message: String,
        iterations: usize,
        residual: f64,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("sampler diverged: {divergent} of {iterations} steps were divergent; use a smaller step size")]
    Divergence { divergent: usize, iterations: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
