//! Independent checks of the Laplace machinery: a posterior sampler and
//! finite-difference gradients.

pub mod finite_diff;
pub mod mcmc;

pub use finite_diff::{finite_diff_gradient, relative_error};
pub use mcmc::{effective_sample_size, mcmc_posterior_predict, McmcConfig, McmcPrediction};
