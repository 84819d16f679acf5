//! Isotropic RBF kernel `k(x, x') = exp(s) * exp(-|x - x'|^2 / (2 sigma^2))`
//! and its parameter gradients.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::math;

/// RBF parameters. The length-scale is stored as `ln sigma` so any real
/// optimizer step keeps it positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfParams {
    /// Log-amplitude; the kernel value at zero distance is `exp(s)`.
    pub s: f64,
    log_sigma: f64,
}

impl RbfParams {
    pub fn new(s: f64, sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::InvalidInput(alloc::format!(
                "RBF length-scale must be positive and finite, got {sigma}"
            )));
        }
        if !s.is_finite() {
            return Err(Error::InvalidInput(alloc::format!(
                "RBF log-amplitude must be finite, got {s}"
            )));
        }
        Ok(Self {
            s,
            log_sigma: math::ln(sigma),
        })
    }

    pub fn from_log_sigma(s: f64, log_sigma: f64) -> Self {
        Self { s, log_sigma }
    }

    pub fn sigma(&self) -> f64 {
        math::exp(self.log_sigma)
    }

    pub fn log_sigma(&self) -> f64 {
        self.log_sigma
    }

    pub fn amplitude(&self) -> f64 {
        math::exp(self.s)
    }
}

/// Pairwise squared Euclidean distances via `|a|^2 + |b|^2 - 2 a.b`, clamped
/// at zero. Rows are points.
pub fn squared_distances(xa: &DMatrix<f64>, xb: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if xa.ncols() != xb.ncols() && xa.nrows() > 0 && xb.nrows() > 0 {
        return Err(Error::DimensionMismatch {
            context: "kernel inputs",
            expected: xa.ncols(),
            found: xb.ncols(),
        });
    }
    let d = xa.ncols().min(xb.ncols());
    let row_norms = |x: &DMatrix<f64>| -> Vec<f64> {
        (0..x.nrows())
            .map(|i| (0..d).map(|k| x[(i, k)] * x[(i, k)]).sum())
            .collect()
    };
    let na = row_norms(xa);
    let nb = row_norms(xb);
    Ok(DMatrix::from_fn(xa.nrows(), xb.nrows(), |i, j| {
        let dot: f64 = (0..d).map(|k| xa[(i, k)] * xb[(j, k)]).sum();
        (na[i] + nb[j] - 2.0 * dot).max(0.0)
    }))
}

pub fn kernel_from_distances(params: &RbfParams, dist2: &DMatrix<f64>) -> DMatrix<f64> {
    let amp = params.amplitude();
    let inv = 1.0 / (2.0 * params.sigma() * params.sigma());
    dist2.map(|r2| amp * math::exp(-r2 * inv))
}

pub fn kernel_matrix(params: &RbfParams, xa: &DMatrix<f64>, xb: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(kernel_from_distances(params, &squared_distances(xa, xb)?))
}

/// `(dK/ds, dK/dsigma)` for the square Gram matrix of `x`.
pub fn kernel_param_gradients(params: &RbfParams, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let dist2 = squared_distances(x, x)?;
    let k = kernel_from_distances(params, &dist2);
    let sigma = params.sigma();
    let sigma3 = sigma * sigma * sigma;
    let dsigma = k.zip_map(&dist2, |kv, r2| kv * r2 / sigma3);
    Ok((k, dsigma))
}

/// Anything that can produce a cross-covariance matrix between point sets.
pub trait Covariance {
    fn gram(&self, xa: &DMatrix<f64>, xb: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

impl Covariance for RbfParams {
    fn gram(&self, xa: &DMatrix<f64>, xb: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        kernel_matrix(self, xa, xb)
    }
}

/// Kernel of a single-fidelity model: one RBF, or a weighted sum of RBFs.
///
/// The weighted sum covers `rho^2 k_l + k_d`, the marginal prior of the
/// high-fidelity latent.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Rbf(RbfParams),
    WeightedSum(Vec<(f64, RbfParams)>),
}

impl KernelSpec {
    pub fn co_kriging(rho: f64, low: RbfParams, delta: RbfParams) -> Self {
        KernelSpec::WeightedSum(alloc::vec![(rho * rho, low), (1.0, delta)])
    }
}

impl Covariance for KernelSpec {
    fn gram(&self, xa: &DMatrix<f64>, xb: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            KernelSpec::Rbf(p) => kernel_matrix(p, xa, xb),
            KernelSpec::WeightedSum(terms) => {
                let dist2 = squared_distances(xa, xb)?;
                let mut out = DMatrix::zeros(xa.nrows(), xb.nrows());
                for (w, p) in terms {
                    out += kernel_from_distances(p, &dist2) * *w;
                }
                Ok(out)
            }
        }
    }
}

/// Median pairwise distance between rows, the default length-scale guess.
pub fn median_distance(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    if n < 2 {
        return 1.0;
    }
    let dist2 = match squared_distances(x, x) {
        Ok(d) => d,
        Err(_) => return 1.0,
    };
    let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for j in 0..n {
        for i in (j + 1)..n {
            d.push(math::sqrt(dist2[(i, j)]));
        }
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn zero_distance_gives_amplitude() {
        let x = pts(1, 2, &[0.3, -0.7]);
        let k = kernel_matrix(&RbfParams::new(0.0, 1.0).unwrap(), &x, &x).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        let k = kernel_matrix(&RbfParams::new(libm::log(2.0), 1.0).unwrap(), &x, &x).unwrap();
        assert!((k[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn squared_distance_two_gives_exp_minus_one() {
        let a = pts(1, 2, &[0.0, 0.0]);
        let b = pts(1, 2, &[1.0, 1.0]);
        let k = kernel_matrix(&RbfParams::new(0.0, 1.0).unwrap(), &a, &b).unwrap();
        assert!((k[(0, 0)] - libm::exp(-1.0)).abs() < 1e-15);
        assert!((k[(0, 0)] - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = pts(2, 2, &[0.0; 4]);
        let b = pts(2, 3, &[0.0; 6]);
        assert!(matches!(
            kernel_matrix(&RbfParams::new(0.0, 1.0).unwrap(), &a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn invalid_sigma_is_rejected() {
        assert!(RbfParams::new(0.0, 0.0).is_err());
        assert!(RbfParams::new(0.0, -1.0).is_err());
        assert!(RbfParams::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn gram_is_exactly_symmetric_with_zero_diagonal_distance() {
        let x = pts(
            4,
            3,
            &[0.1, 0.2, 0.3, 1.5, -0.2, 0.7, 0.9, 0.9, 0.1, -2.0, 0.4, 0.4],
        );
        let p = RbfParams::new(0.4, 0.8).unwrap();
        let (k, dsig) = kernel_param_gradients(&p, &x).unwrap();
        for i in 0..4 {
            assert_eq!(dsig[(i, i)], 0.0);
            assert!((k[(i, i)] - p.amplitude()).abs() < 1e-15);
            for j in 0..4 {
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
    }

    #[test]
    fn ds_gradient_equals_kernel() {
        let x = pts(2, 1, &[0.0, 0.5]);
        let (ds, _) = kernel_param_gradients(&RbfParams::new(0.0, 1.0).unwrap(), &x).unwrap();
        assert_eq!(ds[(0, 0)], 1.0);
    }

    #[test]
    fn weighted_sum_matches_manual_combination() {
        let x = pts(3, 2, &[0.0, 0.0, 0.5, 0.1, -0.3, 0.8]);
        let l = RbfParams::new(0.2, 0.7).unwrap();
        let d = RbfParams::new(-0.5, 0.3).unwrap();
        let spec = KernelSpec::co_kriging(1.7, l, d);
        let k = spec.gram(&x, &x).unwrap();
        let manual = kernel_matrix(&l, &x, &x).unwrap() * (1.7 * 1.7) + kernel_matrix(&d, &x, &x).unwrap();
        assert!((k - manual).amax() < 1e-14);
    }

    #[test]
    fn median_distance_of_collinear_points() {
        let x = pts(3, 1, &[0.0, 1.0, 3.0]);
        assert!((median_distance(&x) - 2.0).abs() < 1e-15);
    }
}
