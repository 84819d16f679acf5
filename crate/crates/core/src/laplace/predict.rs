//! MAP prediction of the high-fidelity latent at new inputs.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, Covariance, KernelSpec, RbfParams};
use crate::linalg::{self, JitterPolicy};
use crate::math;

use crate::dataset::FidelityDataset;

use super::prior::PriorCovariance;
use super::{FittedModel, Hyperparams};

/// Score for one test input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionScore {
    pub latent_mean: f64,
    /// `sigmoid(latent_mean)`.
    pub probability: f64,
    /// `latent_mean > 0`.
    pub label: bool,
}

impl PredictionScore {
    pub fn from_latent(latent_mean: f64) -> Self {
        Self {
            latent_mean,
            probability: math::sigmoid(latent_mean),
            label: latent_mean > 0.0,
        }
    }
}

#[derive(Debug, Clone)]
enum CrossKernel {
    /// Training rows are `[X_L; X_H]`; the target is `rho f_L + delta`.
    MultiFidelity {
        rho: f64,
        low: RbfParams,
        delta: RbfParams,
        n_low: usize,
    },
    Single(KernelSpec),
}

/// Everything needed to score new inputs: training inputs, the cross-kernel
/// and `alpha = K~^{-1} f_hat`.
#[derive(Debug, Clone)]
pub struct Predictor {
    x: DMatrix<f64>,
    kernel: CrossKernel,
    alpha: DVector<f64>,
    /// Factor of the observed-latent covariance `K~`.
    factor: Cholesky<f64, Dyn>,
}

impl Predictor {
    /// Builds the predictor of a multi-fidelity model.
    pub fn multi_fidelity(model: &FittedModel) -> Result<Self> {
        let f_hat = DVector::from_vec(model.xi_hat().observed_latent(model.hyper().rho));
        Self::multi_fidelity_from_parts(model.data(), model.hyper(), model.prior(), &f_hat)
    }

    /// `K~ = P K Pᵀ` with `K` the jittered prior and `P` the map from `xi` to
    /// the observed latents `f_hat = [f_L(X_L); rho f_L(X_H) + delta(X_H)]`.
    pub fn multi_fidelity_from_parts(
        data: &FidelityDataset,
        hyper: &Hyperparams,
        prior: &PriorCovariance,
        f_hat: &DVector<f64>,
    ) -> Result<Self> {
        let (nl, nh) = (data.n_low(), data.n_high());
        let n = nl + nh;
        if f_hat.len() != n || prior.len() != nl + 2 * nh {
            return Err(Error::DimensionMismatch {
                context: "observed latent vector",
                expected: n,
                found: f_hat.len(),
            });
        }
        let rho = hyper.rho;
        let low = prior.low_block();
        let delta = prior.delta_block();

        let mut kt = DMatrix::zeros(n, n);
        kt.view_mut((0, 0), (nl, nl))
            .copy_from(&low.view((0, 0), (nl, nl)));
        let cross = low.view((0, nl), (nl, nh)) * rho;
        kt.view_mut((0, nl), (nl, nh)).copy_from(&cross);
        kt.view_mut((nl, 0), (nh, nl)).copy_from(&cross.transpose());
        let hh = low.view((nl, nl), (nh, nh)) * (rho * rho) + delta;
        kt.view_mut((nl, nl), (nh, nh)).copy_from(&hh);

        let factor = factor_tilde(kt)?;
        let alpha = factor.solve(f_hat);
        Ok(Self {
            x: data.stacked_inputs(),
            kernel: CrossKernel::MultiFidelity {
                rho,
                low: hyper.theta_l,
                delta: hyper.theta_d,
                n_low: nl,
            },
            alpha,
            factor,
        })
    }

    /// Single-kernel predictor from a jittered Gram matrix and the latent
    /// mode at `x`.
    pub fn single(
        kernel: KernelSpec,
        x: DMatrix<f64>,
        gram: DMatrix<f64>,
        f_hat: &DVector<f64>,
    ) -> Result<Self> {
        if gram.nrows() != x.nrows() || f_hat.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                context: "single-fidelity predictor",
                expected: x.nrows(),
                found: f_hat.len(),
            });
        }
        let factor = factor_tilde(gram)?;
        let alpha = factor.solve(f_hat);
        Ok(Self {
            x,
            kernel: CrossKernel::Single(kernel),
            alpha,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn factor(&self) -> &Cholesky<f64, Dyn> {
        &self.factor
    }

    /// `m x n` covariance between the target latent at `x_star` and the
    /// observed latents at the training rows.
    pub fn cross_covariance(&self, x_star: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_star.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "test input dimension",
                expected: self.dim(),
                found: x_star.ncols(),
            });
        }
        match &self.kernel {
            CrossKernel::Single(k) => k.gram(x_star, &self.x),
            CrossKernel::MultiFidelity {
                rho,
                low,
                delta,
                n_low,
            } => {
                let nl = *n_low;
                let nh = self.x.nrows() - nl;
                let mut out = kernel_matrix(low, x_star, &self.x)?;
                out.columns_mut(0, nl).scale_mut(*rho);
                out.columns_mut(nl, nh).scale_mut(rho * rho);
                let xh = self.x.rows(nl, nh).into_owned();
                let kd = kernel_matrix(delta, x_star, &xh)?;
                let mut high = out.columns_mut(nl, nh);
                high += kd;
                Ok(out)
            }
        }
    }

    /// Prior variance of the target latent at a point.
    pub fn prior_variance(&self) -> f64 {
        match &self.kernel {
            CrossKernel::Single(KernelSpec::Rbf(p)) => p.amplitude(),
            CrossKernel::Single(KernelSpec::WeightedSum(terms)) => {
                terms.iter().map(|(w, p)| w * p.amplitude()).sum()
            }
            CrossKernel::MultiFidelity { rho, low, delta, .. } => {
                rho * rho * low.amplitude() + delta.amplitude()
            }
        }
    }

    pub fn latent_means(&self, x_star: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.cross_covariance(x_star)? * &self.alpha)
    }

    pub fn predict(&self, x_star: &DMatrix<f64>) -> Result<Vec<PredictionScore>> {
        Ok(self
            .latent_means(x_star)?
            .iter()
            .map(|&m| PredictionScore::from_latent(m))
            .collect())
    }
}

/// `K~` is positive definite whenever `K` is; the fallback jitter only guards
/// against rounding.
fn factor_tilde(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let policy = JitterPolicy {
        initial: 1e-12,
        ..JitterPolicy::default()
    };
    Ok(linalg::cholesky_jittered(&m, &policy)?.0)
}

/// Scores of the high-fidelity latent `rho f_L(x) + delta(x)` at each row of
/// `x_star`.
pub fn predict(model: &FittedModel, x_star: &DMatrix<f64>) -> Result<Vec<PredictionScore>> {
    Predictor::multi_fidelity(model)?.predict(x_star)
}
