use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unknown problem family `{0}`")]
    UnknownProblem(String),

    #[error("malformed problem descriptor at `{path}`: {message}")]
    Descriptor { path: String, message: String },

    #[error("convexity violated: {0}")]
    NotConvex(String),

    #[error("subproblem solve failed after {iterations} iterations (best residual {best_residual:e}, target {target:e})")]
    Subproblem {
        iterations: usize,
        best_residual: f64,
        target: f64,
    },

    #[error("certificate relation `{relation}` violated (margin {margin:e})")]
    Certificate { relation: &'static str, margin: f64 },

    #[error("iteration {iteration} failed (lambda = {lambda:e}): {source}")]
    Step {
        iteration: usize,
        lambda: f64,
        z_prev: Vec<f64>,
        z_tilde: Vec<f64>,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.into(),
        reason: reason.into(),
    }
}
