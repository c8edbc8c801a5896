use thiserror::Error;

use crate::graph::VariableKey;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("unknown variable {0}")]
    UnknownVariable(VariableKey),

    #[error("variable {0} already exists")]
    DuplicateVariable(VariableKey),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("constraint rows are mutually inconsistent (residual {residual:.3e})")]
    InfeasibleConstraint { residual: f64 },

    #[error("frontal block is rank deficient at column {column}")]
    RankDeficient { column: usize },

    #[error("triangular factor has a zero diagonal entry at {index}")]
    SingularDiagonal { index: usize },

    #[error("variable {0} has no adjacent factor rows")]
    UnconstrainedUnboundedVariable(VariableKey),

    #[error("innovation matrix R + B'PB is singular at step {step}")]
    SingularInnovation { step: usize },

    #[error("KKT system is singular")]
    SingularKkt,

    #[error("Levenberg-Marquardt made no progress after {iterations} iterations (lambda {lambda:.1e})")]
    NoProgress { iterations: usize, lambda: f64 },

    #[error("invalid ordering: {0}")]
    InvalidOrdering(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short snake_case tag, used in CSV status columns and FFI codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownVariable(_) => "unknown_variable",
            Error::DuplicateVariable(_) => "duplicate_variable",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InfeasibleConstraint { .. } => "infeasible_constraint",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::SingularDiagonal { .. } => "singular_diagonal",
            Error::UnconstrainedUnboundedVariable(_) => "unconstrained_variable",
            Error::SingularInnovation { .. } => "singular_innovation",
            Error::SingularKkt => "singular_kkt",
            Error::NoProgress { .. } => "no_progress",
            Error::InvalidOrdering(_) => "invalid_ordering",
            Error::Config(_) => "config",
        }
    }
}
