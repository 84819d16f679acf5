//! Elliptical slice sampling of the latent posterior and Monte-Carlo
//! predictive probabilities.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::dataset::FidelityDataset;
use crate::error::{Error, Result};
use crate::laplace::{build_prior, Hyperparams, Predictor};
use crate::likelihood::{log_likelihood, LatentVector};
use crate::linalg::JitterPolicy;
use crate::math;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    /// Total chain length, burn-in included.
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Bracket shrinkages allowed within one update before giving up.
    pub max_shrinks: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_samples: 4000,
            burn_in: 1000,
            thin: 2,
            seed: 0,
            max_shrinks: 200,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples <= self.burn_in || self.thin == 0 {
            return Err(Error::InvalidInput(alloc::format!(
                "need n_samples > burn_in and thin >= 1 (got {}, {}, {})",
                self.n_samples,
                self.burn_in,
                self.thin
            )));
        }
        Ok(())
    }
}

/// Monte-Carlo predictive summary at each test input.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcPrediction {
    /// Mean of `sigmoid(f_H(x*))` over retained samples.
    pub probabilities: Vec<f64>,
    /// Mean of the conditional latent mean of `f_H(x*)`.
    pub latent_means: Vec<f64>,
    /// Standard deviation of the conditional latent mean across samples.
    pub latent_sds: Vec<f64>,
    pub retained: usize,
    /// Effective sample size of the retained log-likelihood trace.
    pub ess: f64,
    /// Average number of bracket shrinkages per update.
    pub mean_shrinks: f64,
}

/// Samples `xi ~ p(xi | D)` with elliptical slice sampling and averages the
/// predictive class probability of the high-fidelity latent at `x_star`.
///
/// For each retained sample, `f_H(x*)` is drawn from its Gaussian conditional
/// given the observed latents; the draw is antithetic (`mu +- sd z`).
pub fn mcmc_posterior_predict(
    data: &FidelityDataset,
    hyper: &Hyperparams,
    x_star: &DMatrix<f64>,
    config: &McmcConfig,
) -> Result<McmcPrediction> {
    config.validate()?;
    data.validate_shapes()?;
    hyper.validate()?;
    let prior = build_prior(data, hyper, &JitterPolicy::default())?;
    let n = prior.len();
    let (nl, nh) = (data.n_low(), data.n_high());
    let m = x_star.nrows();

    // Conditional of f_H(x*) given the observed latents f_hat:
    // mean = A^T f_hat, var = k** - |L~^{-1} k~*|^2.
    let base = Predictor::multi_fidelity_from_parts(data, hyper, &prior, &DVector::zeros(nl + nh))?;
    let cross = base.cross_covariance(x_star)?;
    let kt_inv_cross = base.factor().solve(&cross.transpose());
    let prior_var = base.prior_variance();
    let sd: Vec<f64> = (0..m)
        .map(|j| {
            let reduction = cross.row(j).transpose().dot(&kt_inv_cross.column(j));
            math::sqrt((prior_var - reduction).max(0.0))
        })
        .collect();

    let mut rng = rng::seeded(config.seed);
    let normal_vec =
        |rng: &mut rng::Rng, len: usize| DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal));
    let loglik = |v: &DVector<f64>| -> Result<f64> {
        let xi = LatentVector::new(v.clone(), nl, nh)?;
        log_likelihood(&xi, data, hyper.rho)
    };

    let mut xi = DVector::zeros(n);
    let mut ll = loglik(&xi)?;
    let mut prob_sum = alloc::vec![0.0; m];
    let mut mean_sum = alloc::vec![0.0; m];
    let mut sq_sum = alloc::vec![0.0; m];
    let mut trace = Vec::new();
    let mut retained = 0usize;
    let mut total_shrinks = 0usize;

    for iter in 0..config.n_samples {
        let nu = prior.factor_mul_vec(&normal_vec(&mut rng, n));
        let u: f64 = rng.random();
        let threshold = ll + math::ln(u);
        let mut theta = rng.random::<f64>() * 2.0 * PI;
        let (mut lo, mut hi) = (theta - 2.0 * PI, theta);
        let mut shrinks = 0;
        loop {
            let proposal = &xi * math::cos(theta) + &nu * math::sin(theta);
            let ll_new = loglik(&proposal)?;
            if ll_new > threshold {
                xi = proposal;
                ll = ll_new;
                break;
            }
            shrinks += 1;
            if shrinks > config.max_shrinks {
                return Err(Error::Sampler(alloc::format!(
                    "slice bracket collapsed at iteration {iter} after {shrinks} shrinks"
                )));
            }
            if theta < 0.0 {
                lo = theta;
            } else {
                hi = theta;
            }
            theta = lo + rng.random::<f64>() * (hi - lo);
        }
        total_shrinks += shrinks;

        if iter < config.burn_in || !(iter - config.burn_in).is_multiple_of(config.thin) {
            continue;
        }
        retained += 1;
        trace.push(ll);
        let latent = LatentVector::new(xi.clone(), nl, nh)?;
        let f_hat = DVector::from_vec(latent.observed_latent(hyper.rho));
        let mu = kt_inv_cross.tr_mul(&f_hat);
        for j in 0..m {
            let z: f64 = rng.sample(StandardNormal);
            let spread = sd[j] * z;
            prob_sum[j] += 0.5 * (math::sigmoid(mu[j] + spread) + math::sigmoid(mu[j] - spread));
            mean_sum[j] += mu[j];
            sq_sum[j] += mu[j] * mu[j];
        }
    }

    let r = retained as f64;
    let latent_means: Vec<f64> = mean_sum.into_iter().map(|v| v / r).collect();
    let latent_sds = sq_sum
        .iter()
        .zip(&latent_means)
        .map(|(sq, mean)| math::sqrt((sq / r - mean * mean).max(0.0)))
        .collect();
    Ok(McmcPrediction {
        probabilities: prob_sum.into_iter().map(|p| p / r).collect(),
        latent_means,
        latent_sds,
        retained,
        ess: effective_sample_size(&trace),
        mean_shrinks: total_shrinks as f64 / config.n_samples as f64,
    })
}

/// Effective sample size from the initial positive sequence of
/// autocorrelation pairs. A constant series counts as fully independent.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let var = centred.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let autocorr = |lag: usize| {
        centred[..n - lag]
            .iter()
            .zip(&centred[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n as f64 * var)
    };
    let mut sum = 0.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = autocorr(lag) + autocorr(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    // tau = 1 + 2 sum_k rho_k, written with the first lag already paired.
    let tau = (1.0 + 2.0 * sum).max(1.0);
    n as f64 / tau
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ess_of_alternating_series_is_large() {
        let s: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(effective_sample_size(&s) >= 200.0 - 1e-9);
    }

    #[test]
    fn ess_of_slow_series_is_small() {
        let s: Vec<f64> = (0..400).map(|i| (i / 100) as f64).collect();
        assert!(effective_sample_size(&s) < 40.0);
    }
}
