//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("se(2) logarithm is ambiguous at rotation angle pi")]
    LogAmbiguity,

    #[error("{context}: matrix is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { context: &'static str, min_eig: f64 },

    #[error("matrix interval is infeasible: upper bound eigenvalue {eigenvalue:e} is below the strictness floor")]
    InfeasibleInterval { eigenvalue: f64 },

    #[error("{context}: constraint violated by eigenvalue {eigenvalue:e}")]
    ConstraintViolation { context: &'static str, eigenvalue: f64 },

    #[error("recovered process covariance is degenerate (min eigenvalue {min_eig:e})")]
    DegenerateQ { min_eig: f64 },

    #[error("consider CSP has no positive definite solution: {0}")]
    ConsiderInfeasible(String),

    #[error("normal equations are rank deficient at node {node}")]
    RankDeficient { node: usize },

    #[error("{path}: missing stage input (run the producing stage first)")]
    MissingInput { path: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dataset schema version {found} is not supported (expected {expected})")]
    SchemaMismatch { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable kind tag, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite(_) => "non-finite",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::LogAmbiguity => "log-ambiguity",
            Error::NotPositiveDefinite { .. } => "not-positive-definite",
            Error::InfeasibleInterval { .. } => "infeasible-interval",
            Error::ConstraintViolation { .. } => "constraint-violation",
            Error::DegenerateQ { .. } => "degenerate-q",
            Error::ConsiderInfeasible(_) => "consider-infeasible",
            Error::RankDeficient { .. } => "rank-deficient",
            Error::MissingInput { .. } => "missing-input",
            Error::Parse { .. } => "parse",
            Error::SchemaMismatch { .. } => "schema-mismatch",
            Error::Io(_) => "io",
        }
    }
}
