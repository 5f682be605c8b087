use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("clique error: {0}")]
    Clique(String),

    #[error("degenerate factor: {0}")]
    DegenerateFactor(String),

    #[error("inconsistent marginals: {0}")]
    Inconsistency(String),

    #[error("parameter mismatch: {0}")]
    ParameterMismatch(String),

    #[error("numeric failure at iteration {iteration}: {message}")]
    NumericFailure { iteration: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("total is unidentifiable: no measurement has the all-ones vector in its row space")]
    TotalUnidentifiable,

    #[error("privacy budget exceeded: requested {requested} with {remaining} remaining")]
    BudgetExceeded { requested: f64, remaining: f64 },

    #[error("model too large: {0}")]
    Feasibility(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

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

pub type Result<T> = std::result::Result<T, Error>;
