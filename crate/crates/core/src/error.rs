use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite integrand value {value} at node x = {node}")]
    NumericalDomain { node: f64, value: f64 },

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error(
        "optimizer stopped after {iterations} iterations with gradient {gradient_norm:e} \
         (best ratio {best_ratio})"
    )]
    OptimizerNotConverged {
        iterations: usize,
        gradient_norm: f64,
        best_ratio: f64,
        /// Node values of the best function found.
        best_values: Vec<f64>,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
