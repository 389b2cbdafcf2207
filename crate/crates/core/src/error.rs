use thiserror::Error;

/// Errors raised by the estimation and index routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error in {func}: argument {value} outside {expected}")]
    Domain {
        func: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("zero-probability cell for department {dept_id} (grid value {value})")]
    ZeroProbabilityCell { dept_id: String, value: f64 },

    #[error("survival probability above the truncation point underflows (sigma = {sigma})")]
    SurvivalUnderflow { sigma: f64 },

    #[error("no start point converged: {0}")]
    NonConvergence(String),

    #[error("hessian is singular or not negative definite")]
    SingularHessian,

    #[error("infeasible configuration: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(func: &'static str, value: f64, expected: &'static str) -> Error {
    Error::Domain {
        func,
        value,
        expected,
    }
}
