//! Multi-fidelity Laplace inference: prior assembly, Newton mode-fitting,
//! the approximate log marginal likelihood, its hyperparameter gradient and
//! MAP prediction.

mod gradient;
mod mode;
mod predict;
mod prior;

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dataset::FidelityDataset;
use crate::error::{Error, Result};
use crate::kernels::RbfParams;
use crate::likelihood::{CurvatureW, LatentVector};
use crate::linalg::JitterPolicy;

pub use gradient::{grad_hyper, posterior_covariance, HyperGradient, PosteriorCovariance};
pub use mode::{negative_hessian, LaplaceState};
pub use predict::{predict, PredictionScore, Predictor};
pub use prior::{build_prior, PriorCovariance};

pub(crate) use gradient::{rbf_block_gradient, GradientPieces};
pub(crate) use mode::{newton, recompute_log_marginal, state_at};

/// Co-kriging coefficient and the two RBF kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub rho: f64,
    pub theta_l: RbfParams,
    pub theta_d: RbfParams,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let finite = self.rho.is_finite()
            && [self.theta_l, self.theta_d]
                .iter()
                .all(|p| p.s.is_finite() && p.log_sigma().is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::InvalidInput(alloc::format!(
                "hyperparameters must be finite: {self:?}"
            )))
        }
    }

    /// Unconstrained coordinates `(rho, s_l, ln sigma_l, s_d, ln sigma_d)`.
    pub fn to_unconstrained(&self) -> [f64; 5] {
        [
            self.rho,
            self.theta_l.s,
            self.theta_l.log_sigma(),
            self.theta_d.s,
            self.theta_d.log_sigma(),
        ]
    }

    pub fn from_unconstrained(v: &[f64; 5]) -> Self {
        Self {
            rho: v[0],
            theta_l: RbfParams::from_log_sigma(v[1], v[2]),
            theta_d: RbfParams::from_log_sigma(v[3], v[4]),
        }
    }
}

/// Mode-fitting controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    /// Stop when `|grad Psi|_inf < tol` or an accepted step raises `Psi` by
    /// less than `tol^2`.
    pub tol: f64,
    pub max_iters: usize,
    /// Step halvings tried before a Newton step is abandoned.
    pub max_halvings: usize,
    pub jitter: JitterPolicy,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 50,
            max_halvings: 20,
            jitter: JitterPolicy::default(),
        }
    }
}

/// Hyperparameters, training data and the Laplace posterior at the mode.
#[derive(Debug, Clone)]
pub struct FittedModel {
    data: FidelityDataset,
    hyper: Hyperparams,
    config: FitConfig,
    state: LaplaceState,
}

impl FittedModel {
    /// Rebuilds a model around a known mode without running Newton. The
    /// stationarity check is redone, so a wrong `xi_hat` is reported as
    /// unconverged by [`FittedModel::is_converged`].
    pub fn from_mode(
        data: FidelityDataset,
        hyper: Hyperparams,
        config: FitConfig,
        xi_hat: DVector<f64>,
    ) -> Result<Self> {
        hyper.validate()?;
        let prior = build_prior(&data, &hyper, &config.jitter)?;
        let xi = LatentVector::for_dataset(xi_hat, &data)?;
        let state = state_at(&data, hyper.rho, prior, xi, config.tol)?;
        Ok(Self {
            data,
            hyper,
            config,
            state,
        })
    }

    pub fn data(&self) -> &FidelityDataset {
        &self.data
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn state(&self) -> &LaplaceState {
        &self.state
    }

    pub fn xi_hat(&self) -> &LatentVector {
        &self.state.xi
    }

    pub fn w_at_mode(&self) -> &CurvatureW {
        &self.state.w
    }

    pub fn prior(&self) -> &PriorCovariance {
        &self.state.prior
    }

    /// Approximate log marginal likelihood, as computed during the fit.
    pub fn log_marginal(&self) -> f64 {
        self.state.log_marginal
    }

    pub fn newton_iters(&self) -> usize {
        self.state.iterations
    }

    pub fn grad_norm(&self) -> f64 {
        self.state.grad_norm
    }

    pub fn is_converged(&self) -> bool {
        self.state.converged
    }

    /// `Psi` after each accepted Newton step.
    pub fn objective_trace(&self) -> &[f64] {
        &self.state.trace
    }

    pub fn latent_values(&self) -> Vec<f64> {
        self.state.xi.values().iter().copied().collect()
    }
}

/// Fits the posterior mode from `xi = 0`.
pub fn fit_mode(data: &FidelityDataset, hyper: &Hyperparams, config: &FitConfig) -> Result<FittedModel> {
    fit_mode_from(data, hyper, config, None)
}

/// Fits the posterior mode starting from `K^{-1} xi = warm_start`. A warm start
/// of the wrong length is ignored.
pub fn fit_mode_from(
    data: &FidelityDataset,
    hyper: &Hyperparams,
    config: &FitConfig,
    warm_start: Option<&DVector<f64>>,
) -> Result<FittedModel> {
    data.validate_shapes()?;
    hyper.validate()?;
    let prior = build_prior(data, hyper, &config.jitter)?;
    let state = newton(data, hyper.rho, prior, config, warm_start)?;
    Ok(FittedModel {
        data: data.clone(),
        hyper: *hyper,
        config: *config,
        state,
    })
}

/// `-xi^T K^{-1} xi / 2 + lambda - log|B| / 2` recomputed from the stored
/// prior factor, mode and `B` factor.
pub fn log_marginal(model: &FittedModel) -> f64 {
    recompute_log_marginal(&model.state, &model.data)
}

/// Dense `W + K^{-1}` at the mode (test helper).
pub fn posterior_precision(model: &FittedModel) -> DMatrix<f64> {
    negative_hessian(&model.state)
}
