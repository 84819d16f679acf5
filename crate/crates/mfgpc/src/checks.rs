//! Verification routines behind `gradcheck` and `mcmc-check`.

use mfgpc_core::laplace::fit_mode_from;
use mfgpc_core::metrics::{pearson, roc_auc};
use mfgpc_core::oracles::{finite_diff_gradient, mcmc_posterior_predict, relative_error, McmcConfig};
use mfgpc_core::{
    fit_mode, grad_hyper, predict, FidelityDataset, FitConfig, FittedModel, Hyperparams, JitterPolicy,
    SfDataset,
};

pub const PARAMETER_NAMES: [&str; 5] = ["rho", "s_l", "log_sigma_l", "s_d", "log_sigma_d"];

/// Fit settings for finite differencing: a tight Newton tolerance and a
/// fixed jitter so the objective is smooth in the hyperparameters.
pub fn gradcheck_fit_config() -> FitConfig {
    FitConfig {
        tol: 1e-10,
        jitter: JitterPolicy::fixed(1e-8),
        ..FitConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub hyper: Hyperparams,
    pub log_marginal: f64,
    /// In `(rho, s_l, ln sigma_l, s_d, ln sigma_d)` coordinates.
    pub analytic: [f64; 5],
    pub numeric: [f64; 5],
    pub rel_errors: [f64; 5],
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().fold(0.0, |m, &e| m.max(e))
    }
}

/// Analytic hyperparameter gradient against central differences of the
/// refitted log marginal likelihood. Relative errors use a floor of
/// `1e-3 * max(1, |grad|_inf)` so near-zero components are not
/// over-weighted.
pub fn gradcheck(data: &FidelityDataset, hyper: &Hyperparams, step: f64) -> mfgpc_core::Result<GradCheck> {
    let config = gradcheck_fit_config();
    let model = fit_mode(data, hyper, &config)?;
    let analytic = grad_hyper(&model)?.unconstrained(&hyper.theta_l, &hyper.theta_d);
    let warm = model.state().alpha().clone();
    let numeric = finite_diff_gradient(
        |x| {
            let h = Hyperparams::from_unconstrained(&[x[0], x[1], x[2], x[3], x[4]]);
            Ok(fit_mode_from(data, &h, &config, Some(&warm))?.log_marginal())
        },
        &hyper.to_unconstrained(),
        step,
    )?;
    let scale = analytic.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut rel_errors = [0.0; 5];
    let mut num = [0.0; 5];
    for i in 0..5 {
        num[i] = numeric[i];
        rel_errors[i] = relative_error(analytic[i], numeric[i], 1e-3 * scale);
    }
    Ok(GradCheck {
        hyper: *hyper,
        log_marginal: model.log_marginal(),
        analytic,
        numeric: num,
        rel_errors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcCheck {
    pub laplace_probabilities: Vec<f64>,
    pub laplace_latent: Vec<f64>,
    pub mcmc_probabilities: Vec<f64>,
    pub mcmc_latent: Vec<f64>,
    pub laplace_auc: f64,
    pub mcmc_auc: f64,
    /// Pearson correlation of the two probability vectors.
    pub correlation: f64,
    pub ess: f64,
    pub retained: usize,
    pub mean_shrinks: f64,
}

impl McmcCheck {
    pub fn auc_gap(&self) -> f64 {
        (self.laplace_auc - self.mcmc_auc).abs()
    }
}

/// Laplace predictions of `model` against MCMC predictions under the same
/// hyperparameters, scored on `test`.
pub fn mcmc_check(
    model: &FittedModel,
    test: &SfDataset,
    config: &McmcConfig,
) -> mfgpc_core::Result<McmcCheck> {
    let laplace = predict(model, &test.x)?;
    let mcmc = mcmc_posterior_predict(model.data(), model.hyper(), &test.x, config)?;
    let laplace_probabilities: Vec<f64> = laplace.iter().map(|s| s.probability).collect();
    let laplace_latent: Vec<f64> = laplace.iter().map(|s| s.latent_mean).collect();
    let laplace_auc = roc_auc(&laplace_latent, &test.y)?;
    let mcmc_auc = roc_auc(&mcmc.probabilities, &test.y)?;
    let correlation = pearson(&laplace_probabilities, &mcmc.probabilities).unwrap_or(f64::NAN);
    Ok(McmcCheck {
        laplace_probabilities,
        laplace_latent,
        mcmc_probabilities: mcmc.probabilities,
        mcmc_latent: mcmc.latent_means,
        laplace_auc,
        mcmc_auc,
        correlation,
        ess: mcmc.ess,
        retained: mcmc.retained,
        mean_shrinks: mcmc.mean_shrinks,
    })
}
