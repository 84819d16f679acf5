//! Analytic gradient of the approximate log marginal likelihood.

use nalgebra::{DMatrix, DVector};

use crate::dataset::FidelityDataset;
use crate::error::{Error, Result};
use crate::kernels::{self, RbfParams};
use crate::likelihood::{self, rho_partials_compact};

use super::mode::LaplaceState;
use super::FittedModel;

/// `dL/d(rho, s_l, sigma_l, s_d, sigma_d)`; kernel widths are differentiated
/// with respect to `sigma` itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperGradient {
    pub d_rho: f64,
    /// `(dL/ds_l, dL/dsigma_l)`.
    pub d_theta_l: (f64, f64),
    /// `(dL/ds_d, dL/dsigma_d)`.
    pub d_theta_d: (f64, f64),
}

impl HyperGradient {
    /// Gradient in the unconstrained coordinates
    /// `(rho, s_l, ln sigma_l, s_d, ln sigma_d)`.
    pub fn unconstrained(&self, theta_l: &RbfParams, theta_d: &RbfParams) -> [f64; 5] {
        [
            self.d_rho,
            self.d_theta_l.0,
            self.d_theta_l.1 * theta_l.sigma(),
            self.d_theta_d.0,
            self.d_theta_d.1 * theta_d.sigma(),
        ]
    }
}

/// `M = (K^{-1} + W)^{-1}` kept as a dense matrix, formed as `K - K R K` with
/// `R = S B^{-1} S`.
#[derive(Debug, Clone)]
pub struct PosteriorCovariance {
    m: DMatrix<f64>,
}

impl PosteriorCovariance {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }
}

impl likelihood::SymmetricEntries for PosteriorCovariance {
    fn size(&self) -> usize {
        self.m.nrows()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }
}

/// Quantities shared by every component of the gradient.
pub(crate) struct GradientPieces {
    /// `S B^{-1} S`.
    pub r: DMatrix<f64>,
    pub m: PosteriorCovariance,
    /// `dL/dxi_hat = -c/2`.
    pub dl_dxi: DVector<f64>,
    /// `grad lambda` at the mode.
    pub grad: DVector<f64>,
}

impl GradientPieces {
    pub fn new(state: &LaplaceState, data: &FidelityDataset) -> Result<Self> {
        let n = state.prior.len();
        let s = state.w.sqrt();
        let b_inv = state.b_chol.inverse();
        let r = s.sandwich(&b_inv);
        let k = state.prior.dense();
        let kr = state.prior.mul_right(&r).transpose();
        let mut m = &k - &kr * &k;
        // Restore exact symmetry lost in the two products.
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let m = PosteriorCovariance { m };
        let c = likelihood::third_derivative_contraction(&m, &state.xi, data, state.rho)?;
        let grad = likelihood::grad_log_likelihood(&state.xi, data, state.rho)?;
        Ok(Self {
            r,
            m,
            dl_dxi: c * -0.5,
            grad,
        })
    }
}

/// `dL/dtheta` for a parameter that moves only the diagonal prior block
/// starting at `offset`, with raw derivative `dk` of that block.
pub(crate) fn kernel_block_gradient(
    state: &LaplaceState,
    pieces: &GradientPieces,
    offset: usize,
    dk: &DMatrix<f64>,
) -> f64 {
    let nb = dk.nrows();
    if nb == 0 {
        return 0.0;
    }
    let n = state.prior.len();
    let a_b = state.a.rows(offset, nb);
    let explicit_quad = 0.5 * (dk * a_b).dot(&a_b);
    let r_b = pieces.r.view((offset, offset), (nb, nb));
    let trace = 0.5 * r_b.component_mul(dk).sum();

    // d xi_hat / d theta = (I + K W)^{-1} dK grad = v - K R v, v = dK grad.
    let mut v = DVector::zeros(n);
    v.rows_mut(offset, nb)
        .copy_from(&(dk * pieces.grad.rows(offset, nb)));
    let dxi = &v - state.prior.mul_vec(&(&pieces.r * &v));
    explicit_quad - trace + pieces.dl_dxi.dot(&dxi)
}

/// `(dL/ds, dL/dsigma)` of an RBF block.
pub(crate) fn rbf_block_gradient(
    state: &LaplaceState,
    pieces: &GradientPieces,
    offset: usize,
    params: &RbfParams,
    x: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    if x.nrows() == 0 {
        return Ok((0.0, 0.0));
    }
    let (dk_ds, dk_dsigma) = kernels::kernel_param_gradients(params, x)?;
    Ok((
        kernel_block_gradient(state, pieces, offset, &dk_ds),
        kernel_block_gradient(state, pieces, offset, &dk_dsigma),
    ))
}

fn rho_gradient(state: &LaplaceState, pieces: &GradientPieces, data: &FidelityDataset) -> Result<f64> {
    let nh = data.n_high();
    if nh == 0 {
        return Ok(0.0);
    }
    let rho = state.rho;
    let nl = data.n_low();
    let partials = rho_partials_compact(&state.xi, data, rho)?;
    let m = pieces.m.matrix();
    let dxi = m * &partials.d_grad;

    let mut explicit_trace = 0.0;
    for j in 0..nh {
        let (p, q) = (nl + j, nl + nh + j);
        let (pp, pq, qq) = partials.pair_entries(j, rho);
        explicit_trace += m[(p, p)] * pp + 2.0 * m[(p, q)] * pq + m[(q, q)] * qq;
    }
    // Psi terms: -a^T dxi + d lambda/d rho + grad^T dxi (cancel at the mode).
    let psi_part = partials.d_lambda + (&pieces.grad - &state.a).dot(&dxi);
    // -log|B|/2 terms: explicit dW/drho plus the implicit part through xi_hat.
    Ok(psi_part - 0.5 * explicit_trace + pieces.dl_dxi.dot(&dxi))
}

/// Analytic gradient of the approximate log marginal likelihood of a fitted
/// model.
pub fn grad_hyper(model: &FittedModel) -> Result<HyperGradient> {
    let state = model.state();
    if !state.converged {
        return Err(Error::Unconverged {
            grad_norm: state.grad_norm,
            tol: model.config().tol,
        });
    }
    let data = model.data();
    let hyper = model.hyper();
    let pieces = GradientPieces::new(state, data)?;
    let d_rho = rho_gradient(state, &pieces, data)?;
    let stacked = data.stacked_inputs();
    let d_theta_l = rbf_block_gradient(state, &pieces, 0, &hyper.theta_l, &stacked)?;
    let d_theta_d = rbf_block_gradient(
        state,
        &pieces,
        state.prior.low_len(),
        &hyper.theta_d,
        &data.x_high,
    )?;
    Ok(HyperGradient {
        d_rho,
        d_theta_l,
        d_theta_d,
    })
}

/// Dense `(K^{-1} + W)^{-1}` at the mode.
pub fn posterior_covariance(model: &FittedModel) -> Result<PosteriorCovariance> {
    Ok(GradientPieces::new(model.state(), model.data())?.m)
}
