//! Damped Newton mode-fitting in the `B = I + W^{1/2} K W^{1/2}` form.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataset::FidelityDataset;
use crate::error::{Error, Result};
use crate::likelihood::{self, CurvatureW, LatentVector};
use crate::linalg;

use super::prior::PriorCovariance;
use super::FitConfig;

/// Laplace posterior at the mode, shared by the multi- and single-fidelity
/// models.
#[derive(Debug, Clone)]
pub struct LaplaceState {
    pub(crate) prior: PriorCovariance,
    pub(crate) rho: f64,
    pub(crate) xi: LatentVector,
    /// `K^{-1} xi`, tracked by the iteration so `K` is never inverted.
    pub(crate) a: DVector<f64>,
    pub(crate) w: CurvatureW,
    pub(crate) b_chol: Cholesky<f64, Dyn>,
    pub(crate) log_det_b: f64,
    pub(crate) lambda: f64,
    pub(crate) log_marginal: f64,
    pub(crate) iterations: usize,
    pub(crate) grad_norm: f64,
    pub(crate) converged: bool,
    /// `Psi` after every accepted step, starting from the initial point.
    pub(crate) trace: Vec<f64>,
}

impl LaplaceState {
    pub fn prior(&self) -> &PriorCovariance {
        &self.prior
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn xi(&self) -> &LatentVector {
        &self.xi
    }

    /// `K^{-1} xi_hat`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn curvature(&self) -> &CurvatureW {
        &self.w
    }

    pub fn b_factor(&self) -> &Cholesky<f64, Dyn> {
        &self.b_chol
    }

    pub fn log_det_b(&self) -> f64 {
        self.log_det_b
    }

    pub fn log_likelihood(&self) -> f64 {
        self.lambda
    }

    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad_norm
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    pub fn objective_trace(&self) -> &[f64] {
        &self.trace
    }

    /// `Psi(xi_hat) = lambda - xi^T K^{-1} xi / 2`.
    pub fn psi(&self) -> f64 {
        self.lambda - 0.5 * self.a.dot(self.xi.values())
    }
}

/// `B = I + S K S` and its Cholesky factor.
pub(crate) fn factor_b(prior: &PriorCovariance, w: &CurvatureW) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let s = w.sqrt();
    let ks = s.apply_right(&prior.dense());
    let mut b = s.apply_left(&ks);
    for i in 0..b.nrows() {
        b[(i, i)] += 1.0;
    }
    // Symmetrize against rounding in the two structured products.
    let b = (&b + b.transpose()) * 0.5;
    let n = b.nrows();
    let chol = Cholesky::new(b).ok_or(Error::Factorization {
        size: n,
        jitter: 0.0,
        mean_diagonal: f64::NAN,
    })?;
    let log_det = linalg::log_det(&chol);
    Ok((chol, log_det))
}

fn psi_at(
    data: &FidelityDataset,
    rho: f64,
    prior: &PriorCovariance,
    a: &DVector<f64>,
) -> Result<(LatentVector, f64, f64)> {
    let xi = LatentVector::for_dataset(prior.mul_vec(a), data)?;
    let lambda = likelihood::log_likelihood(&xi, data, rho)?;
    let psi = lambda - 0.5 * a.dot(xi.values());
    Ok((xi, lambda, psi))
}

/// Maximizes `Psi(xi) = lambda(xi) - xi^T K^{-1} xi / 2` from `K^{-1} xi = init`
/// (zero when `None`).
pub(crate) fn newton(
    data: &FidelityDataset,
    rho: f64,
    prior: PriorCovariance,
    config: &FitConfig,
    init: Option<&DVector<f64>>,
) -> Result<LaplaceState> {
    let n = data.latent_len();
    if prior.len() != n {
        return Err(Error::DimensionMismatch {
            context: "prior covariance",
            expected: n,
            found: prior.len(),
        });
    }
    if !rho.is_finite() {
        return Err(Error::InvalidInput(alloc::format!(
            "rho must be finite, got {rho}"
        )));
    }
    let mut a = match init {
        Some(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => v.clone(),
        _ => DVector::zeros(n),
    };
    let (mut xi, mut lambda, mut psi) = psi_at(data, rho, &prior, &a)?;
    if !psi.is_finite() {
        a = DVector::zeros(n);
        (xi, lambda, psi) = psi_at(data, rho, &prior, &a)?;
    }
    let mut trace = alloc::vec![psi];
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm;

    loop {
        let g = likelihood::grad_log_likelihood(&xi, data, rho)?;
        grad_norm = (&g - &a).amax();
        if grad_norm < config.tol {
            converged = true;
            break;
        }
        if iterations >= config.max_iters {
            break;
        }
        iterations += 1;

        let w = likelihood::curvature(&xi, data, rho)?;
        let s = w.sqrt();
        let (b_chol, _) = factor_b(&prior, &w)?;
        let b = w.mul_vec(xi.values()) + &g;
        let t = s.apply_vec(&prior.mul_vec(&b));
        let c = b_chol.solve(&t);
        let a_full = &b - s.apply_vec(&c);
        let da = &a_full - &a;

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let a_try = &a + &da * step;
            let (xi_try, lambda_try, psi_try) = psi_at(data, rho, &prior, &a_try)?;
            if psi_try.is_finite() && psi_try >= psi {
                accepted = Some((a_try, xi_try, lambda_try, psi_try));
                break;
            }
            step *= 0.5;
        }
        let Some((a_new, xi_new, lambda_new, psi_new)) = accepted else {
            // Psi is concave, so the Newton direction ascends; if no fraction
            // of it raises Psi, the achievable increase is below rounding.
            converged = true;
            break;
        };
        let increase = psi_new - psi;
        a = a_new;
        xi = xi_new;
        lambda = lambda_new;
        psi = psi_new;
        trace.push(psi);
        if increase < config.tol * config.tol {
            let g = likelihood::grad_log_likelihood(&xi, data, rho)?;
            grad_norm = (&g - &a).amax();
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::NotConverged {
            iterations,
            grad_norm,
            last_iterate: xi.values().iter().copied().collect(),
        });
    }

    let w = likelihood::curvature(&xi, data, rho)?;
    let (b_chol, log_det_b) = factor_b(&prior, &w)?;
    let log_marginal = psi - 0.5 * log_det_b;
    Ok(LaplaceState {
        prior,
        rho,
        xi,
        a,
        w,
        b_chol,
        log_det_b,
        lambda,
        log_marginal,
        iterations,
        grad_norm,
        converged,
        trace,
    })
}

/// Rebuilds the state at a given `xi_hat` without iterating (used when a
/// model is loaded from disk).
pub(crate) fn state_at(
    data: &FidelityDataset,
    rho: f64,
    prior: PriorCovariance,
    xi: LatentVector,
    tol: f64,
) -> Result<LaplaceState> {
    if xi.len() != prior.len() {
        return Err(Error::DimensionMismatch {
            context: "latent vector vs prior",
            expected: prior.len(),
            found: xi.len(),
        });
    }
    let a = prior.solve(xi.values());
    let lambda = likelihood::log_likelihood(&xi, data, rho)?;
    let g = likelihood::grad_log_likelihood(&xi, data, rho)?;
    let grad_norm = (&g - &a).amax();
    let w = likelihood::curvature(&xi, data, rho)?;
    let (b_chol, log_det_b) = factor_b(&prior, &w)?;
    let quad = prior.quad_inverse(xi.values());
    let psi = lambda - 0.5 * quad;
    Ok(LaplaceState {
        prior,
        rho,
        xi,
        a,
        w,
        b_chol,
        log_det_b,
        lambda,
        log_marginal: psi - 0.5 * log_det_b,
        iterations: 0,
        grad_norm,
        converged: grad_norm < tol,
        trace: alloc::vec![psi],
    })
}

/// Independent recomputation of the approximate log marginal likelihood from
/// stored parts: `-xi^T K^{-1} xi / 2 + lambda - log|B| / 2`, using a fresh
/// triangular solve against the prior factor.
pub(crate) fn recompute_log_marginal(state: &LaplaceState, data: &FidelityDataset) -> f64 {
    let quad = state.prior.quad_inverse(state.xi.values());
    let lambda = likelihood::log_likelihood(&state.xi, data, state.rho).unwrap_or(f64::NAN);
    -0.5 * quad + lambda - 0.5 * linalg::log_det(&state.b_chol)
}

/// `-(grad grad Psi) = W + K^{-1}`, dense. Test helper; inverts `K`.
pub fn negative_hessian(state: &LaplaceState) -> DMatrix<f64> {
    let k = state.prior.dense();
    let n = k.nrows();
    let k_inv = k
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
    state.w.dense() + k_inv
}
