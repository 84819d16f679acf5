//! Cholesky factorization with jitter escalation, plus a few dense helpers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::math;

/// Diagonal jitter schedule for Gram matrices.
///
/// The first attempt adds `initial * scale` to the diagonal, where `scale` is
/// the mean diagonal (or 1 when `relative` is false). On failure the jitter
/// grows by `growth` until it would exceed `max * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterPolicy {
    pub initial: f64,
    pub max: f64,
    pub growth: f64,
    pub relative: bool,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            initial: 1e-8,
            max: 1e-4,
            growth: 10.0,
            relative: true,
        }
    }
}

impl JitterPolicy {
    /// A fixed absolute jitter with no escalation.
    pub fn fixed(value: f64) -> Self {
        Self {
            initial: value,
            max: value,
            growth: 10.0,
            relative: false,
        }
    }

    pub fn scale_for(&self, mean_diagonal: f64) -> f64 {
        if self.relative && mean_diagonal > 0.0 {
            mean_diagonal
        } else {
            1.0
        }
    }

    /// Successive absolute jitter values to try.
    pub fn schedule(&self, mean_diagonal: f64) -> impl Iterator<Item = f64> {
        let scale = self.scale_for(mean_diagonal);
        let limit = self.max * scale * (1.0 + 1e-12);
        let growth = self.growth.max(1.0 + 1e-3);
        let first = self.initial * scale;
        core::iter::successors(Some(first), move |j| Some(j * growth)).take_while(move |j| *j <= limit)
    }
}

pub fn mean_diagonal(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    m.diagonal().iter().sum::<f64>() / n as f64
}

/// Factorizes `m + jitter * I` following `policy`. Returns the factor and the
/// absolute jitter used.
pub fn cholesky_jittered(m: &DMatrix<f64>, policy: &JitterPolicy) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mean = mean_diagonal(m);
    let mut last = 0.0;
    for jitter in policy.schedule(mean) {
        last = jitter;
        if let Some(chol) = try_cholesky(m, jitter) {
            return Ok((chol, jitter));
        }
    }
    Err(Error::Factorization {
        size: m.nrows(),
        jitter: last,
        mean_diagonal: mean,
    })
}

pub fn try_cholesky(m: &DMatrix<f64>, jitter: f64) -> Option<Cholesky<f64, Dyn>> {
    let mut a = m.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += jitter;
    }
    Cholesky::new(a)
}

/// `log |A|` from a Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| math::ln(l[(i, i)])).sum::<f64>()
}

/// `x^T A^{-1} x` via one forward substitution.
pub fn quad_inverse(chol: &Cholesky<f64, Dyn>, x: &DVector<f64>) -> f64 {
    let l = chol.l();
    match l.solve_lower_triangular(x) {
        Some(z) => z.dot(&z),
        None => f64::NAN,
    }
}

/// Symmetric eigenvalues, smallest first.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> alloc::vec::Vec<f64> {
    let mut ev: alloc::vec::Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(math::abs(*v)))
}
