//! Block-diagonal prior covariance of the stacked latent vector.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataset::FidelityDataset;
use crate::error::{Error, Result};
use crate::kernels::kernel_matrix;
use crate::linalg::{self, JitterPolicy};

use super::Hyperparams;

/// `K = blockdiag(k_l([X_L; X_H]), k_d(X_H))` with jitter already on the
/// diagonal. Both blocks get the same absolute jitter.
#[derive(Debug, Clone)]
pub struct PriorCovariance {
    low: DMatrix<f64>,
    low_chol: Cholesky<f64, Dyn>,
    delta: DMatrix<f64>,
    delta_chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl PriorCovariance {
    /// Factorizes the two raw blocks, escalating a shared jitter on failure.
    pub fn from_blocks(low: DMatrix<f64>, delta: DMatrix<f64>, policy: &JitterPolicy) -> Result<Self> {
        let n = low.nrows() + delta.nrows();
        let mean = if n == 0 {
            0.0
        } else {
            (low.trace() + delta.trace()) / n as f64
        };
        let mut last = 0.0;
        for jitter in policy.schedule(mean) {
            last = jitter;
            let Some(low_chol) = linalg::try_cholesky(&low, jitter) else {
                continue;
            };
            let Some(delta_chol) = linalg::try_cholesky(&delta, jitter) else {
                continue;
            };
            let add = |mut m: DMatrix<f64>| {
                for i in 0..m.nrows() {
                    m[(i, i)] += jitter;
                }
                m
            };
            return Ok(Self {
                low: add(low),
                low_chol,
                delta: add(delta),
                delta_chol,
                jitter,
            });
        }
        Err(Error::Factorization {
            size: n,
            jitter: last,
            mean_diagonal: mean,
        })
    }

    pub fn len(&self) -> usize {
        self.low.nrows() + self.delta.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Size of the `k_l` block (`n_l + n_h`).
    pub fn low_len(&self) -> usize {
        self.low.nrows()
    }

    /// Jittered `k_l` block.
    pub fn low_block(&self) -> &DMatrix<f64> {
        &self.low
    }

    /// Jittered `k_d` block.
    pub fn delta_block(&self) -> &DMatrix<f64> {
        &self.delta
    }

    pub fn low_factor(&self) -> &Cholesky<f64, Dyn> {
        &self.low_chol
    }

    pub fn delta_factor(&self) -> &Cholesky<f64, Dyn> {
        &self.delta_chol
    }

    /// Dense jittered `K`.
    pub fn dense(&self) -> DMatrix<f64> {
        let (nl, n) = (self.low_len(), self.len());
        let mut k = DMatrix::zeros(n, n);
        k.view_mut((0, 0), (nl, nl)).copy_from(&self.low);
        k.view_mut((nl, nl), (n - nl, n - nl)).copy_from(&self.delta);
        k
    }

    /// Dense lower-triangular factor of the jittered `K`.
    pub fn dense_factor(&self) -> DMatrix<f64> {
        let (nl, n) = (self.low_len(), self.len());
        let mut l = DMatrix::zeros(n, n);
        l.view_mut((0, 0), (nl, nl)).copy_from(&self.low_chol.l());
        l.view_mut((nl, nl), (n - nl, n - nl))
            .copy_from(&self.delta_chol.l());
        l
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let nl = self.low_len();
        let mut out = DVector::zeros(v.len());
        out.rows_mut(0, nl).gemv(1.0, &self.low, &v.rows(0, nl), 0.0);
        let nd = self.delta.nrows();
        out.rows_mut(nl, nd).gemv(1.0, &self.delta, &v.rows(nl, nd), 0.0);
        out
    }

    /// `L z` with `L` the block Cholesky factor; maps white noise to a prior draw.
    pub fn factor_mul_vec(&self, z: &DVector<f64>) -> DVector<f64> {
        let nl = self.low_len();
        let nd = self.delta.nrows();
        let mut out = DVector::zeros(z.len());
        out.rows_mut(0, nl)
            .gemv(1.0, &self.low_chol.l(), &z.rows(0, nl), 0.0);
        out.rows_mut(nl, nd)
            .gemv(1.0, &self.delta_chol.l(), &z.rows(nl, nd), 0.0);
        out
    }

    /// `K^{-1} v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let nl = self.low_len();
        let nd = self.delta.nrows();
        let mut out = DVector::zeros(v.len());
        out.rows_mut(0, nl)
            .copy_from(&self.low_chol.solve(&v.rows(0, nl).into_owned()));
        out.rows_mut(nl, nd)
            .copy_from(&self.delta_chol.solve(&v.rows(nl, nd).into_owned()));
        out
    }

    /// `v^T K^{-1} v` by forward substitution.
    pub fn quad_inverse(&self, v: &DVector<f64>) -> f64 {
        let nl = self.low_len();
        let nd = self.delta.nrows();
        linalg::quad_inverse(&self.low_chol, &v.rows(0, nl).into_owned())
            + linalg::quad_inverse(&self.delta_chol, &v.rows(nl, nd).into_owned())
    }

    /// `X K` for `X` with `len()` columns.
    pub fn mul_right(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let nl = self.low_len();
        let nd = self.delta.nrows();
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        out.columns_mut(0, nl)
            .gemm(1.0, &x.columns(0, nl), &self.low, 0.0);
        out.columns_mut(nl, nd)
            .gemm(1.0, &x.columns(nl, nd), &self.delta, 0.0);
        out
    }

    /// Entry `(i, j)` of the jittered `K`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let nl = self.low_len();
        match (i < nl, j < nl) {
            (true, true) => self.low[(i, j)],
            (false, false) => self.delta[(i - nl, j - nl)],
            _ => 0.0,
        }
    }

    /// Row range of the block containing index `i`.
    pub fn block_range(&self, i: usize) -> core::ops::Range<usize> {
        let nl = self.low_len();
        if i < nl {
            0..nl
        } else {
            nl..self.len()
        }
    }
}

/// Prior of the multi-fidelity latent vector for `data` under `hyper`.
pub fn build_prior(
    data: &FidelityDataset,
    hyper: &Hyperparams,
    policy: &JitterPolicy,
) -> Result<PriorCovariance> {
    data.validate_shapes()?;
    let stacked = data.stacked_inputs();
    let low = kernel_matrix(&hyper.theta_l, &stacked, &stacked)?;
    let delta = kernel_matrix(&hyper.theta_d, &data.x_high, &data.x_high)?;
    PriorCovariance::from_blocks(low, delta, policy)
}
