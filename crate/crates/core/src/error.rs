use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("singular linear system at column {0}")]
    Singular(usize),

    #[error("eigenvalue iteration did not converge")]
    EigenNoConvergence,

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        /// Last iterate, flattened node-major followed by parameters.
        last_iterate: Vec<f64>,
    },

    #[error("mesh refinement would exceed {0} nodes")]
    RefinementLimit(usize),

    #[error("boundary value problem has {conditions} conditions but needs {expected}")]
    ConditionCount { conditions: usize, expected: usize },

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("solver converged to the trivial branch (peak {0:e})")]
    WrongBranch(f64),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64, state: Vec<f64> },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("spectral structure: {0}")]
    Structure(String),

    #[error("spectral scan inconsistent with dense oracle near {0}")]
    Inconsistent(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("bracket error: {0}")]
    Bracket(String),

    #[error("classification unresolved on [{lo}, {hi}] at the maximum horizon")]
    Unresolved { lo: f64, hi: f64 },

    #[error("miss function has no sign change on [{lo}, {hi}]")]
    Refinement { lo: f64, hi: f64 },

    #[error("heteroclinic truncation insufficient: {0}")]
    Truncation(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: &str) -> Error {
    Error::InvalidParameter {
        name,
        reason: String::from(reason),
    }
}
