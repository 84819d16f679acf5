//! Ordinary Laplace GP classification on one label source, run through the
//! multi-fidelity machinery with an empty high-fidelity block.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::dataset::{FidelityDataset, SfDataset};
use crate::error::{Error, Result};
use crate::hyperopt::{bfgs_ascent, within_bounds, Evaluation, OptConfig};
use crate::kernels::{median_distance, Covariance, KernelSpec, RbfParams};
use crate::laplace::FitConfig;
use crate::laplace::{
    newton, rbf_block_gradient, recompute_log_marginal, state_at, GradientPieces, LaplaceState,
    PredictionScore, Predictor, PriorCovariance,
};
use crate::likelihood::LatentVector;
use crate::math;
use crate::rng;

/// Fitted single-fidelity classifier.
#[derive(Debug, Clone)]
pub struct SfModel {
    data: SfDataset,
    /// The same sample viewed as a low-fidelity-only dataset.
    view: FidelityDataset,
    kernel: KernelSpec,
    config: FitConfig,
    state: LaplaceState,
}

impl SfModel {
    pub fn data(&self) -> &SfDataset {
        &self.data
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// The RBF parameters, when the kernel is a single RBF.
    pub fn params(&self) -> Option<RbfParams> {
        match &self.kernel {
            KernelSpec::Rbf(p) => Some(*p),
            KernelSpec::WeightedSum(_) => None,
        }
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn state(&self) -> &LaplaceState {
        &self.state
    }

    pub fn f_hat(&self) -> &DVector<f64> {
        self.state.xi().values()
    }

    pub fn log_marginal(&self) -> f64 {
        self.state.log_marginal()
    }

    /// Log marginal likelihood recomputed from the stored factors.
    pub fn recomputed_log_marginal(&self) -> f64 {
        recompute_log_marginal(&self.state, &self.view)
    }

    pub fn is_converged(&self) -> bool {
        self.state.is_converged()
    }

    pub fn predictor(&self) -> Result<Predictor> {
        Predictor::single(
            self.kernel.clone(),
            self.data.x.clone(),
            self.state.prior().low_block().clone(),
            self.f_hat(),
        )
    }
}

fn as_low_only(data: &SfDataset) -> Result<FidelityDataset> {
    FidelityDataset::low_only(data.x.clone(), data.y.clone())
}

/// Fits the latent mode under an arbitrary kernel, optionally warm-started
/// from `K^{-1} f`.
pub fn sf_fit_kernel(
    data: &SfDataset,
    kernel: KernelSpec,
    config: &FitConfig,
    warm_start: Option<&DVector<f64>>,
) -> Result<SfModel> {
    let view = as_low_only(data)?;
    let gram = kernel.gram(&data.x, &data.x)?;
    let prior = PriorCovariance::from_blocks(gram, DMatrix::zeros(0, 0), &config.jitter)?;
    let state = newton(&view, 1.0, prior, config, warm_start)?;
    Ok(SfModel {
        data: data.clone(),
        view,
        kernel,
        config: *config,
        state,
    })
}

/// Rebuilds a model around a stored mode without running Newton.
pub fn sf_from_mode(
    data: &SfDataset,
    kernel: KernelSpec,
    config: &FitConfig,
    f_hat: DVector<f64>,
) -> Result<SfModel> {
    let view = as_low_only(data)?;
    let gram = kernel.gram(&data.x, &data.x)?;
    let prior = PriorCovariance::from_blocks(gram, DMatrix::zeros(0, 0), &config.jitter)?;
    let xi = LatentVector::for_dataset(f_hat, &view)?;
    let state = state_at(&view, 1.0, prior, xi, config.tol)?;
    Ok(SfModel {
        data: data.clone(),
        view,
        kernel,
        config: *config,
        state,
    })
}

pub fn sf_fit(data: &SfDataset, params: RbfParams, config: &FitConfig) -> Result<SfModel> {
    sf_fit_kernel(data, KernelSpec::Rbf(params), config, None)
}

pub fn sf_predict(model: &SfModel, x_star: &DMatrix<f64>) -> Result<Vec<PredictionScore>> {
    model.predictor()?.predict(x_star)
}

/// `(dL/ds, dL/dsigma)` of a single-RBF model.
pub fn sf_grad(model: &SfModel) -> Result<(f64, f64)> {
    let params = model
        .params()
        .ok_or_else(|| Error::InvalidInput("hyperparameter gradient needs a single RBF kernel".into()))?;
    if !model.is_converged() {
        return Err(Error::Unconverged {
            grad_norm: model.state.grad_norm(),
            tol: model.config.tol,
        });
    }
    let pieces = GradientPieces::new(&model.state, &model.view)?;
    rbf_block_gradient(&model.state, &pieces, 0, &params, &model.data.x)
}

fn initial_params(ln_ell: f64, config: &OptConfig, index: usize) -> RbfParams {
    if index == 0 {
        return RbfParams::from_log_sigma(0.0, ln_ell);
    }
    let mut rng = rng::stream(config.seed, index as u64);
    let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let s = draw(config.s_init_range);
    let ls = ln_ell + draw(config.log_sigma_init_range);
    RbfParams::from_log_sigma(s, ls)
}

fn evaluate(
    data: &SfDataset,
    config: &OptConfig,
    ln_ell: f64,
    x: &DVector<f64>,
    warm: Option<&SfModel>,
) -> Result<Evaluation<SfModel>> {
    if !within_bounds(x, ln_ell, config, false) {
        return Err(Error::Optimization("trial point outside parameter bounds".into()));
    }
    let params = RbfParams::from_log_sigma(x[0], x[1]);
    let model = sf_fit_kernel(
        data,
        KernelSpec::Rbf(params),
        &config.fit,
        warm.map(|m| m.state.alpha()),
    )?;
    let (ds, dsigma) = sf_grad(&model)?;
    Ok(Evaluation {
        value: model.log_marginal(),
        grad: DVector::from_column_slice(&[ds, dsigma * params.sigma()]),
        payload: model,
    })
}

/// Multi-restart ascent over `(s, ln sigma)`; restart 0 starts at `s = 0`,
/// `sigma = median distance`.
pub fn sf_optimize(data: &SfDataset, config: &OptConfig) -> Result<SfModel> {
    config.validate()?;
    data.validate_for_training()?;
    let ln_ell = math::ln(median_distance(&data.x));
    let mut best: Option<SfModel> = None;
    let mut failures: Vec<String> = Vec::new();
    for index in 0..config.restarts {
        let p = initial_params(ln_ell, config, index);
        let x0 = DVector::from_column_slice(&[p.s, p.log_sigma()]);
        match bfgs_ascent(
            |x, warm| evaluate(data, config, ln_ell, x, warm),
            x0,
            config.max_steps,
            config.grad_tol,
            config.step_tol,
        ) {
            Ok(run) => {
                let model = run.best.payload;
                if best
                    .as_ref()
                    .is_none_or(|b| model.log_marginal() > b.log_marginal())
                {
                    best = Some(model);
                }
            }
            Err(e) => failures.push(format!("restart {index}: {e}")),
        }
    }
    best.ok_or_else(|| Error::Optimization(format!("every restart failed: {}", failures.join("; "))))
}
