use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::Fidelity;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{fidelity}-fidelity labels must contain at least one label of each class")]
    SingleClass { fidelity: Fidelity },

    #[error(
        "cholesky factorization of a {size}x{size} matrix failed with jitter up to {jitter:e} \
         (mean diagonal {mean_diagonal:e})"
    )]
    Factorization {
        size: usize,
        jitter: f64,
        mean_diagonal: f64,
    },

    /// Newton mode-fitting hit its iteration cap. Carries the last iterate.
    #[error("mode fitting did not converge after {iterations} iterations (|grad|_inf = {grad_norm:e})")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("model is not at a converged mode (|grad|_inf = {grad_norm:e}, tolerance {tol:e})")]
    Unconverged { grad_norm: f64, tol: f64 },

    #[error("non-finite function value at coordinate {coordinate}")]
    NonFinite { coordinate: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("hyperparameter optimization failed: {0}")]
    Optimization(String),

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("sampler failure: {0}")]
    Sampler(String),
}

pub type Result<T> = core::result::Result<T, Error>;
