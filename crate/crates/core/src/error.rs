use thiserror::Error;

/// Errors raised by the homogenization and bidomain solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrihomError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("conducting subdomain is disconnected: {0}")]
    DisconnectedSubdomain(String),

    #[error("label {0} is not present in this cell")]
    UnknownLabel(String),

    #[error("cell has no interface (single label)")]
    EmptyInterface,

    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),

    #[error("no convergence after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("right-hand side violates the compatibility condition: |(F,1)| = {0:e}")]
    Incompatible(f64),

    #[error("missing corrector for direction {0}")]
    MissingCorrector(usize),

    #[error("corrector residual {residual:e} exceeds limit {limit:e}")]
    ResidualTooHigh { residual: f64, limit: f64 },

    #[error("non-finite value in field `{0}` (time step too large?)")]
    NonFinite(String),

    #[error("non-positive input: {0}")]
    NonPositiveInput(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for TrihomError {
    fn from(e: std::io::Error) -> Self {
        TrihomError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, TrihomError>;
