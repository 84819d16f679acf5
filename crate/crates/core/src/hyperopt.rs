//! Hyperparameter selection by multi-restart quasi-Newton ascent on the
//! approximate log marginal likelihood.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::dataset::FidelityDataset;
use crate::error::{Error, Result};
use crate::kernels::{median_distance, RbfParams};
use crate::laplace::{fit_mode_from, grad_hyper, FitConfig, FittedModel, Hyperparams};
use crate::math;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub restarts: usize,
    /// Accepted line-search steps per restart.
    pub max_steps: usize,
    /// Stop once an accepted step moves every coordinate by less than this.
    pub step_tol: f64,
    /// Stop once `|dL|_inf` in the unconstrained coordinates drops below this.
    pub grad_tol: f64,
    pub seed: u64,
    /// Cycled over restarts; restart 0 always starts at `rho = 1`, and so does
    /// every restart when there is no high-fidelity data.
    pub rho_init_set: Vec<f64>,
    /// Range of `ln(sigma / l)`, `l` the median pairwise distance.
    pub log_sigma_init_range: (f64, f64),
    pub s_init_range: (f64, f64),
    /// Trial points outside `|s| <= bound`, `|ln(sigma / l)| <= bound` or
    /// `|rho| <= rho_bound` count as failed evaluations.
    pub param_bound: f64,
    pub rho_bound: f64,
    pub fit: FitConfig,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_steps: 200,
            step_tol: 1e-6,
            grad_tol: 1e-3,
            seed: 0,
            rho_init_set: alloc::vec![1.0, 0.5, -1.0],
            log_sigma_init_range: (math::ln(0.1), math::ln(10.0)),
            s_init_range: (-1.0, 3.0),
            param_bound: 12.0,
            rho_bound: 50.0,
            fit: FitConfig::default(),
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.restarts == 0 {
            return Err(Error::InvalidInput("restarts must be at least 1".into()));
        }
        if self.rho_init_set.is_empty() || self.rho_init_set.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidInput(
                "rho_init_set must be non-empty and finite".into(),
            ));
        }
        if !range_ok(self.log_sigma_init_range) || !range_ok(self.s_init_range) {
            return Err(Error::InvalidInput(
                "initialization ranges must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

/// Why a restart stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    /// No trial point along the search direction improved `L`.
    LineSearchFailed,
    MaxSteps,
}

/// Objective value and gradient at a point, plus whatever the caller wants to
/// keep from the evaluation (a fitted model, typically).
pub struct Evaluation<T> {
    pub value: f64,
    pub grad: DVector<f64>,
    pub payload: T,
}

/// Outcome of one ascent run.
pub struct Ascent<T> {
    pub x: DVector<f64>,
    pub best: Evaluation<T>,
    /// `L` at the start and after every accepted step.
    pub history: Vec<f64>,
    pub termination: Termination,
    pub evaluations: usize,
}

/// BFGS ascent with Armijo backtracking. Failed evaluations (errors or
/// non-finite values) are treated as rejected trial points.
pub fn bfgs_ascent<T, F>(
    mut eval: F,
    x0: DVector<f64>,
    max_steps: usize,
    grad_tol: f64,
    step_tol: f64,
) -> Result<Ascent<T>>
where
    F: FnMut(&DVector<f64>, Option<&T>) -> Result<Evaluation<T>>,
{
    const ARMIJO: f64 = 1e-4;
    const MAX_BACKTRACKS: usize = 30;
    const MAX_STEP: f64 = 2.0;

    let n = x0.len();
    let mut cur = eval(&x0, None)?;
    if !cur.value.is_finite() || cur.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Optimization(
            "non-finite objective at the initial point".into(),
        ));
    }
    let mut x = x0;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut history = alloc::vec![cur.value];
    let mut evaluations = 1;
    let mut termination = Termination::MaxSteps;

    for _ in 0..max_steps {
        if cur.grad.amax() < grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut dir = &h * &cur.grad;
        let mut slope = cur.grad.dot(&dir);
        if slope.is_nan() || slope <= 0.0 || dir.iter().any(|d| !d.is_finite()) {
            h = DMatrix::identity(n, n);
            dir = cur.grad.clone();
            slope = cur.grad.dot(&dir);
        }
        let mut t = 1.0;
        let len = dir.amax();
        if len > MAX_STEP {
            t = MAX_STEP / len;
        }
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + &dir * t;
            evaluations += 1;
            if let Ok(e) = eval(&trial, Some(&cur.payload)) {
                let ok = e.value.is_finite()
                    && e.grad.iter().all(|g| g.is_finite())
                    && e.value >= cur.value + ARMIJO * t * slope;
                if ok {
                    accepted = Some((trial, e));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((x_new, next)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };
        let s = &x_new - &x;
        // Minimization convention for the curvature pair: y = -(g_new - g).
        let y = &cur.grad - &next.grad;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = x_new;
        cur = next;
        history.push(cur.value);
        if s.amax() < step_tol {
            termination = Termination::StepTolerance;
            break;
        }
    }
    if termination == Termination::MaxSteps && cur.grad.amax() < grad_tol {
        termination = Termination::GradientTolerance;
    }
    Ok(Ascent {
        x,
        best: cur,
        history,
        termination,
        evaluations,
    })
}

/// Summary of one restart of [`optimize_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct RestartReport {
    pub index: usize,
    pub initial: Hyperparams,
    pub initial_log_marginal: Option<f64>,
    pub result: core::result::Result<RestartResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartResult {
    pub hyper: Hyperparams,
    pub log_marginal: f64,
    pub history: Vec<f64>,
    pub grad_norm: f64,
    pub termination: Termination,
    pub evaluations: usize,
}

pub struct OptOutcome {
    pub model: FittedModel,
    pub best_restart: usize,
    pub restarts: Vec<RestartReport>,
}

/// Default starting point: `rho = 1`, `s = 0`, `sigma = median distance`.
pub fn default_hyper(data: &FidelityDataset) -> Hyperparams {
    let ell = median_distance(&data.stacked_inputs());
    let p = RbfParams::from_log_sigma(0.0, math::ln(ell));
    Hyperparams {
        rho: 1.0,
        theta_l: p,
        theta_d: p,
    }
}

/// Starting point of restart `index`.
pub fn initial_hyper(data: &FidelityDataset, config: &OptConfig, index: usize) -> Hyperparams {
    let base = default_hyper(data);
    if index == 0 {
        return base;
    }
    let ln_ell = base.theta_l.log_sigma();
    let mut rng = rng::stream(config.seed, index as u64);
    let mut draw = |(lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    let s_l = draw(config.s_init_range);
    let ls_l = ln_ell + draw(config.log_sigma_init_range);
    let s_d = draw(config.s_init_range);
    let ls_d = ln_ell + draw(config.log_sigma_init_range);
    // Without high-fidelity data L does not depend on rho, so the sign of the
    // prediction would be an accident of initialization; keep rho = 1.
    let rho = if data.n_high() == 0 {
        1.0
    } else {
        config.rho_init_set[index % config.rho_init_set.len()]
    };
    Hyperparams {
        rho,
        theta_l: RbfParams::from_log_sigma(s_l, ls_l),
        theta_d: RbfParams::from_log_sigma(s_d, ls_d),
    }
}

pub(crate) fn within_bounds(x: &DVector<f64>, ln_ell: f64, config: &OptConfig, has_rho: bool) -> bool {
    let offset = if has_rho { 1 } else { 0 };
    if has_rho && x[0].abs() > config.rho_bound {
        return false;
    }
    x.iter().skip(offset).enumerate().all(|(i, v)| {
        let centred = if i % 2 == 1 { v - ln_ell } else { *v };
        centred.abs() <= config.param_bound
    })
}

fn evaluate(
    data: &FidelityDataset,
    config: &OptConfig,
    ln_ell: f64,
    x: &DVector<f64>,
    warm: Option<&FittedModel>,
) -> Result<Evaluation<FittedModel>> {
    if !within_bounds(x, ln_ell, config, true) {
        return Err(Error::Optimization("trial point outside parameter bounds".into()));
    }
    let hyper = Hyperparams::from_unconstrained(&[x[0], x[1], x[2], x[3], x[4]]);
    let model = fit_mode_from(data, &hyper, &config.fit, warm.map(|m| m.state().alpha()))?;
    let g = grad_hyper(&model)?.unconstrained(&hyper.theta_l, &hyper.theta_d);
    Ok(Evaluation {
        value: model.log_marginal(),
        grad: DVector::from_column_slice(&g),
        payload: model,
    })
}

/// Runs every restart and keeps the one with the highest converged `L`.
pub fn optimize_report(data: &FidelityDataset, config: &OptConfig) -> Result<OptOutcome> {
    config.validate()?;
    data.validate_for_training()?;
    let ln_ell = default_hyper(data).theta_l.log_sigma();
    let mut reports = Vec::with_capacity(config.restarts);
    let mut best: Option<(usize, FittedModel)> = None;
    for index in 0..config.restarts {
        let init = initial_hyper(data, config, index);
        let x0 = DVector::from_column_slice(&init.to_unconstrained());
        let run = bfgs_ascent(
            |x, warm| evaluate(data, config, ln_ell, x, warm),
            x0,
            config.max_steps,
            config.grad_tol,
            config.step_tol,
        );
        let (initial_log_marginal, result) = match run {
            Ok(run) => {
                let model = run.best.payload;
                let result = RestartResult {
                    hyper: *model.hyper(),
                    log_marginal: model.log_marginal(),
                    history: run.history.clone(),
                    grad_norm: run.best.grad.amax(),
                    termination: run.termination,
                    evaluations: run.evaluations,
                };
                let better = match &best {
                    Some((_, m)) => model.log_marginal() > m.log_marginal(),
                    None => true,
                };
                if better {
                    best = Some((index, model));
                }
                (run.history.first().copied(), Ok(result))
            }
            Err(e) => (None, Err(format!("{e}"))),
        };
        reports.push(RestartReport {
            index,
            initial: init,
            initial_log_marginal,
            result,
        });
    }
    match best {
        Some((best_restart, model)) => Ok(OptOutcome {
            model,
            best_restart,
            restarts: reports,
        }),
        None => {
            let msgs: Vec<String> = reports
                .iter()
                .filter_map(|r| {
                    r.result
                        .as_ref()
                        .err()
                        .map(|e| format!("restart {}: {e}", r.index))
                })
                .collect();
            Err(Error::Optimization(format!(
                "every restart failed: {}",
                msgs.join("; ")
            )))
        }
    }
}

/// Tuned multi-fidelity model.
pub fn optimize(data: &FidelityDataset, config: &OptConfig) -> Result<FittedModel> {
    Ok(optimize_report(data, config)?.model)
}
