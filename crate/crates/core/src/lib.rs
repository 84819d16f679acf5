//! Multi-fidelity Gaussian process classification.
//!
//! Two label sources are modelled through latent processes linked by
//! co-kriging: the high-fidelity latent is `rho * f_low + delta`, where
//! `f_low` and `delta` are independent Gaussian processes with isotropic RBF
//! kernels. Posterior inference uses the Laplace approximation over the
//! stacked latent vector `[f_low(X_L); f_low(X_H); delta(X_H)]`, and model
//! selection maximizes the approximate log marginal likelihood with analytic
//! gradients.
//!
//! The crate is `no_std` compatible (it needs `alloc`). Disable the default
//! `std` feature to build without the standard library; numerics go through
//! `libm` either way so results are identical across both builds.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod datagen;
pub mod dataset;
pub mod error;
pub mod hyperopt;
pub mod kernels;
pub mod laplace;
pub mod likelihood;
pub mod linalg;
pub mod math;
pub mod metrics;
pub mod oracles;
pub mod rng;
pub mod single_fidelity;

pub use dataset::{Fidelity, FidelityDataset, SfDataset};
pub use error::{Error, Result};
pub use hyperopt::{optimize, OptConfig};
pub use kernels::{Covariance, KernelSpec, RbfParams};
pub use laplace::{
    fit_mode, grad_hyper, log_marginal, predict, FitConfig, FittedModel, HyperGradient, Hyperparams,
    PredictionScore,
};
pub use likelihood::{CurvatureW, LatentVector};
pub use linalg::JitterPolicy;
pub use single_fidelity::{sf_fit, sf_from_mode, sf_optimize, sf_predict, SfModel};

/// Re-exported so downstream crates build matrices with the same version.
pub use nalgebra;
