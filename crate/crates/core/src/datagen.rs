//! Synthetic multi-fidelity problems drawn from the co-kriging prior, label
//! noise injection and budgeted subsampling.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::dataset::{has_both_classes, FidelityDataset, SfDataset};
use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, RbfParams};
use crate::linalg::{self, JitterPolicy};
use crate::math;
use crate::rng::{self, Rng};

/// Recipe for one synthetic problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSpec {
    pub dim: usize,
    pub n_low: usize,
    pub n_high: usize,
    pub n_test: usize,
    /// Target disagreement rate between `1[f_L > 0]` and `1[f_H > 0]`.
    pub noise_level: f64,
    pub kernel_l: RbfParams,
    pub kernel_d: RbfParams,
    pub seed: u64,
    /// Draw labels as `Bernoulli(sigmoid(f))` instead of `1[f > 0]`.
    pub bernoulli_labels: bool,
    /// Uniform points used to measure the disagreement rate.
    pub probe_count: usize,
    /// Use this `rho` instead of matching `noise_level`.
    pub fixed_rho: Option<f64>,
}

impl SynthesisSpec {
    /// Defaults for the kernels and probe set; counts and noise as given.
    pub fn new(dim: usize, n_low: usize, n_high: usize, n_test: usize, noise_level: f64, seed: u64) -> Self {
        Self {
            dim,
            n_low,
            n_high,
            n_test,
            noise_level,
            kernel_l: default_kernel(dim),
            kernel_d: default_kernel(dim),
            seed,
            bernoulli_labels: false,
            probe_count: 4096,
            fixed_rho: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_low == 0 || self.n_high == 0 || self.n_test == 0 {
            return Err(Error::InvalidInput(
                "dimension and point counts must be positive".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.noise_level) {
            return Err(Error::InvalidInput(format!(
                "noise level must lie in [0, 0.5), got {}",
                self.noise_level
            )));
        }
        if self.fixed_rho.is_some_and(|r| !r.is_finite()) {
            return Err(Error::InvalidInput("fixed rho must be finite".into()));
        }
        if self.probe_count == 0 {
            return Err(Error::InvalidInput("probe_count must be positive".into()));
        }
        Ok(())
    }
}

/// Generation kernel used when none is given: unit amplitude and a width
/// that grows with `sqrt(dim)`, since pairwise distances in the unit cube do.
pub fn default_kernel(dim: usize) -> RbfParams {
    RbfParams::from_log_sigma(0.0, math::ln(0.12 * math::sqrt(dim as f64)))
}

/// Latent values behind a generated problem.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub rho: f64,
    /// Disagreement rate measured on the probe set at `rho`.
    pub disagreement: f64,
    /// Effective target used by the search (the requested level, floored
    /// slightly above zero so a finite `rho` exists).
    pub target: f64,
    /// Number of `delta` draws used (redraws happen when the requested
    /// disagreement is out of reach).
    pub attempts: usize,
    pub f_low_at_low: Vec<f64>,
    pub f_low_at_high: Vec<f64>,
    pub delta_at_high: Vec<f64>,
    pub f_low_at_test: Vec<f64>,
    pub delta_at_test: Vec<f64>,
}

impl GroundTruth {
    pub fn high_latent_at_high(&self) -> Vec<f64> {
        combine(self.rho, &self.f_low_at_high, &self.delta_at_high)
    }

    pub fn high_latent_at_test(&self) -> Vec<f64> {
        combine(self.rho, &self.f_low_at_test, &self.delta_at_test)
    }
}

fn combine(rho: f64, fl: &[f64], d: &[f64]) -> Vec<f64> {
    fl.iter().zip(d).map(|(l, d)| rho * l + d).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    pub train: FidelityDataset,
    /// High-fidelity labelled test points.
    pub test: SfDataset,
    pub truth: GroundTruth,
}

const MAX_ATTEMPTS: usize = 16;
const MATCH_TOL: f64 = 0.02;
const MIN_TARGET: f64 = 0.005;

fn uniform_points(rng: &mut Rng, n: usize, dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, dim, |_, _| rng.random::<f64>())
}

fn normals(rng: &mut Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// A draw of one GP at the pool points, plus per-probe draws from the exact
/// marginal conditional given the pool values.
struct ProcessDraw {
    pool: DVector<f64>,
    probes: Vec<f64>,
}

struct Conditioner {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// `L^{-1} k(pool, probes)`.
    v: DMatrix<f64>,
    cond_sd: Vec<f64>,
}

impl Conditioner {
    fn new(params: &RbfParams, pool: &DMatrix<f64>, probes: &DMatrix<f64>) -> Result<Self> {
        let k = kernel_matrix(params, pool, pool)?;
        let (chol, _) = linalg::cholesky_jittered(&k, &JitterPolicy::default())?;
        let cross = kernel_matrix(params, pool, probes)?;
        let v = chol
            .l()
            .solve_lower_triangular(&cross)
            .ok_or_else(|| Error::Generation("triangular solve failed for the probe set".into()))?;
        let amp = params.amplitude();
        let cond_sd = (0..probes.nrows())
            .map(|j| math::sqrt((amp - v.column(j).norm_squared()).max(0.0)))
            .collect();
        Ok(Self { chol, v, cond_sd })
    }

    fn draw(&self, rng: &mut Rng) -> ProcessDraw {
        let z = normals(rng, self.chol.l().nrows());
        let pool = self.chol.l() * &z;
        // Conditional mean at probe j is v_j^T z because L^{-1} f = z.
        let means = self.v.tr_mul(&z);
        let probes = means
            .iter()
            .zip(&self.cond_sd)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        ProcessDraw { pool, probes }
    }
}

/// Disagreement rate `mean(1[f_L > 0] != 1[rho f_L + delta > 0])`.
pub fn disagreement_rate(rho: f64, f_low: &[f64], delta: &[f64]) -> f64 {
    if f_low.is_empty() {
        return 0.0;
    }
    let count = f_low
        .iter()
        .zip(delta)
        .filter(|(l, d)| (**l > 0.0) != (rho * **l + **d > 0.0))
        .count();
    count as f64 / f_low.len() as f64
}

/// Smallest-error `rho >= 0` for the target rate. Each probe disagrees
/// exactly for `rho < t_i = -delta_i / f_L_i`, so the rate is a
/// non-increasing step function with breakpoints `t_i`; the returned `rho`
/// sits midway inside the best step.
pub fn match_rho(f_low: &[f64], delta: &[f64], target: f64) -> (f64, f64) {
    let mut breaks: Vec<f64> = f_low
        .iter()
        .zip(delta)
        .filter(|(l, _)| **l != 0.0)
        .map(|(l, d)| -d / l)
        .filter(|t| *t > 0.0)
        .collect();
    breaks.sort_by(|a, b| a.total_cmp(b));
    let n = f_low.len().max(1) as f64;
    let count0 = f_low
        .iter()
        .zip(delta)
        .filter(|(l, d)| (**l > 0.0) != (**d > 0.0))
        .count();
    // rate on (breaks[k-1], breaks[k]) is (count0 - k) / n, with breaks[-1] = 0.
    let mut best = (f64::INFINITY, 0.0);
    let mut best_k = 0;
    for k in 0..=breaks.len() {
        let rate = count0.saturating_sub(k) as f64 / n;
        let err = (rate - target).abs();
        if err < best.0 {
            best = (err, rate);
            best_k = k;
        }
    }
    let lo = if best_k == 0 { 0.0 } else { breaks[best_k - 1] };
    let rho = if best_k < breaks.len() {
        0.5 * (lo + breaks[best_k])
    } else if breaks.is_empty() {
        1.0
    } else {
        2.0 * lo
    };
    (rho, disagreement_rate(rho, f_low, delta))
}

fn labels(rng: &mut Rng, latent: &[f64], bernoulli: bool) -> Vec<bool> {
    latent
        .iter()
        .map(|&f| {
            if bernoulli {
                rng.random::<f64>() < math::sigmoid(f)
            } else {
                f > 0.0
            }
        })
        .collect()
}

/// Draws a problem from the co-kriging prior with `rho` chosen so the
/// low/high disagreement rate on a uniform probe set matches the requested
/// noise level.
pub fn generate_synthetic(spec: &SynthesisSpec) -> Result<SyntheticProblem> {
    spec.validate()?;
    let (nl, nh, nt, d) = (spec.n_low, spec.n_high, spec.n_test, spec.dim);
    let mut rng = rng::stream(spec.seed, 0);
    let x_low = uniform_points(&mut rng, nl, d);
    let x_high = uniform_points(&mut rng, nh, d);
    let x_test = uniform_points(&mut rng, nt, d);
    let probes = uniform_points(&mut rng, spec.probe_count, d);

    // Rows: low, high, test for f_L; high, test for delta.
    let mut pool_l = DMatrix::zeros(nl + nh + nt, d);
    pool_l.rows_mut(0, nl).copy_from(&x_low);
    pool_l.rows_mut(nl, nh).copy_from(&x_high);
    pool_l.rows_mut(nl + nh, nt).copy_from(&x_test);
    let pool_d = pool_l.rows(nl, nh + nt).into_owned();

    let f_low = Conditioner::new(&spec.kernel_l, &pool_l, &probes)?.draw(&mut rng);
    let cond_d = Conditioner::new(&spec.kernel_d, &pool_d, &probes)?;
    let target = spec.noise_level.max(MIN_TARGET);

    let mut attempts = 0;
    let (delta, rho, rate) = loop {
        attempts += 1;
        let mut delta_rng = rng::stream(spec.seed, attempts as u64);
        let delta = cond_d.draw(&mut delta_rng);
        if let Some(rho) = spec.fixed_rho {
            let rate = disagreement_rate(rho, &f_low.probes, &delta.probes);
            break (delta, rho, rate);
        }
        let (rho, rate) = match_rho(&f_low.probes, &delta.probes, target);
        if (rate - target).abs() <= MATCH_TOL {
            break (delta, rho, rate);
        }
        if attempts >= MAX_ATTEMPTS {
            let max_rate = disagreement_rate(0.0, &f_low.probes, &delta.probes);
            return Err(Error::Generation(format!(
                "could not reach disagreement {target} within {MATCH_TOL} (closest {rate:.4}, rate \
                 at rho=0 is {max_rate:.4}) in {attempts} draws; change the delta kernel \
                 (amplitude or length scale) or the noise level"
            )));
        }
    };

    let fl = f_low.pool.as_slice();
    let dl = delta.pool.as_slice();
    let truth = GroundTruth {
        rho,
        disagreement: rate,
        target,
        attempts,
        f_low_at_low: fl[..nl].to_vec(),
        f_low_at_high: fl[nl..nl + nh].to_vec(),
        delta_at_high: dl[..nh].to_vec(),
        f_low_at_test: fl[nl + nh..].to_vec(),
        delta_at_test: dl[nh..].to_vec(),
    };

    let mut label_rng = rng::stream(spec.seed, 1 << 32);
    let y_low = labels(&mut label_rng, &truth.f_low_at_low, spec.bernoulli_labels);
    let y_high = labels(
        &mut label_rng,
        &truth.high_latent_at_high(),
        spec.bernoulli_labels,
    );
    let y_test = labels(
        &mut label_rng,
        &truth.high_latent_at_test(),
        spec.bernoulli_labels,
    );
    Ok(SyntheticProblem {
        train: FidelityDataset::new(x_low, y_low, x_high, y_high)?,
        test: SfDataset::new(x_test, y_test)?,
        truth,
    })
}

/// Flips each label independently with probability `p`.
pub fn inject_flip_noise(labels: &[bool], p: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "flip probability must lie in [0, 1], got {p}"
        )));
    }
    let mut rng = rng::seeded(seed);
    Ok(labels
        .iter()
        .map(|&y| if rng.random::<f64>() < p { !y } else { y })
        .collect())
}

/// Training sizes for a budget of `budget` high-fidelity units, where a
/// low-fidelity point costs `lf_cost_fraction` of a high-fidelity one.
pub fn budget_counts(budget: f64, hf_share: f64, lf_cost_fraction: f64) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&hf_share) {
        return Err(Error::InvalidInput(format!(
            "hf_share must lie in [0, 1], got {hf_share}"
        )));
    }
    if !(lf_cost_fraction > 0.0 && lf_cost_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "lf_cost_fraction must lie in (0, 1], got {lf_cost_fraction}"
        )));
    }
    if !(budget >= 0.0 && budget.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "budget must be non-negative, got {budget}"
        )));
    }
    let n_high = math::round(hf_share * budget) as usize;
    let n_low = math::round((1.0 - hf_share) * budget / lf_cost_fraction) as usize;
    Ok((n_low, n_high))
}

/// Indices chosen by a subsample, into the pool's low and high parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsample {
    pub data: FidelityDataset,
    pub low_indices: Vec<usize>,
    pub high_indices: Vec<usize>,
}

const MAX_RESAMPLES: usize = 1000;

/// Samples `n_low` and `n_high` points without replacement, redrawing until
/// every non-empty fidelity has both classes.
pub fn subsample(pool: &FidelityDataset, n_low: usize, n_high: usize, seed: u64) -> Result<Subsample> {
    if n_low > pool.n_low() || n_high > pool.n_high() {
        return Err(Error::InvalidInput(format!(
            "requested ({n_low}, {n_high}) points but the pool has ({}, {})",
            pool.n_low(),
            pool.n_high()
        )));
    }
    let mut rng = rng::seeded(seed);
    for _ in 0..MAX_RESAMPLES {
        let mut low = sample(&mut rng, pool.n_low(), n_low).into_vec();
        let mut high = sample(&mut rng, pool.n_high(), n_high).into_vec();
        low.sort_unstable();
        high.sort_unstable();
        let y_low: Vec<bool> = low.iter().map(|&i| pool.y_low[i]).collect();
        let y_high: Vec<bool> = high.iter().map(|&i| pool.y_high[i]).collect();
        let ok = (y_low.is_empty() || has_both_classes(&y_low))
            && (y_high.is_empty() || has_both_classes(&y_high));
        if ok {
            let x_low = pool.x_low.select_rows(low.iter());
            let x_high = pool.x_high.select_rows(high.iter());
            return Ok(Subsample {
                data: FidelityDataset::new(x_low, y_low, x_high, y_high)?,
                low_indices: low,
                high_indices: high,
            });
        }
    }
    Err(Error::InvalidInput(format!(
        "no subsample of size ({n_low}, {n_high}) with both classes found in {MAX_RESAMPLES} draws"
    )))
}

/// Subsample matching a budget; see [`budget_counts`].
pub fn budget_subsample(
    pool: &FidelityDataset,
    budget: f64,
    hf_share: f64,
    lf_cost_fraction: f64,
    seed: u64,
) -> Result<FidelityDataset> {
    let (n_low, n_high) = budget_counts(budget, hf_share, lf_cost_fraction)?;
    Ok(subsample(pool, n_low, n_high, seed)?.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_arithmetic() {
        assert_eq!(budget_counts(100.0, 1.0, 0.5).unwrap(), (0, 100));
        assert_eq!(budget_counts(100.0, 0.0, 0.125).unwrap(), (800, 0));
        assert_eq!(budget_counts(100.0, 0.5, 0.25).unwrap(), (200, 50));
    }

    #[test]
    fn flip_extremes() {
        let y = [true, false, true, true];
        assert_eq!(inject_flip_noise(&y, 0.0, 3).unwrap(), y);
        assert_eq!(
            inject_flip_noise(&y, 1.0, 3).unwrap(),
            [false, true, false, false]
        );
    }

    #[test]
    fn rho_search_hits_exact_steps() {
        let fl = [1.0, -1.0, 2.0, 0.5];
        let d = [-0.5, 2.0, -6.0, 1.0];
        // Breakpoints 0.5, 2, 3; probe 4 never disagrees.
        let (rho, rate) = match_rho(&fl, &d, 0.25);
        assert_eq!(rate, 0.25);
        assert!(rho > 2.0 && rho < 3.0);
        let (_, rate0) = match_rho(&fl, &d, 0.0);
        assert_eq!(rate0, 0.0);
    }
}
