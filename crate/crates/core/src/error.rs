use thiserror::Error;

/// Errors raised by the library. Diagnostic failures that are data, not
/// faults (validation findings, spanner verification), travel in reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("desk-scale bound exceeded: {0}")]
    DeskScale(String),

    #[error("mixture expands to more than {limit} deterministic components; use Monte Carlo mode")]
    ExpansionLimit { limit: usize },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("malformed dump: {0}")]
    Dump(String),

    #[error("oracle returned a non-finite value")]
    NonFiniteOracle,

    #[error("generator gave up after {0} attempts")]
    RejectionBudget(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
