use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation (negative radius,
    /// point outside the grid, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A configuration field is out of range or inconsistent.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// The exact transport oracle was asked to solve an instance that is too large.
    #[error("capacity exceeded: {entries} coupling entries (limit {limit})")]
    Capacity { entries: usize, limit: usize },

    /// An iterative solver stopped before reaching its tolerance.
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e}, tol {tol:.1e})")]
    Convergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    /// A particle position became non-finite.
    #[error("numerical blow-up: particle {index} has non-finite position")]
    NumericalBlowup { index: usize },

    /// A grid solver produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
