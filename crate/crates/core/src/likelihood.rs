//! Bernoulli-sigmoid likelihood of the stacked latent vector
//! `xi = [f_L(X_L); f_L(X_H); delta(X_H)]`.
//!
//! The high-fidelity latent at `x_j^H` is `rho * f_L(x_j^H) + delta_j`, so
//! every high-fidelity label touches two coordinates of `xi`. The negative
//! Hessian `W` is therefore not diagonal: its high-fidelity part is
//! `[[rho^2, rho], [rho, 1]] (x) D`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dataset::FidelityDataset;
use crate::error::{Error, Result};
use crate::math::{self, log_sigmoid, sigmoid_family, signed_label};

pub use crate::math::sigmoid_family as sigmoid_triple;

/// Stacked latent values with fixed block boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    values: DVector<f64>,
    n_low: usize,
    n_high: usize,
}

impl LatentVector {
    pub fn new(values: DVector<f64>, n_low: usize, n_high: usize) -> Result<Self> {
        let expected = n_low + 2 * n_high;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "latent vector",
                expected,
                found: values.len(),
            });
        }
        Ok(Self {
            values,
            n_low,
            n_high,
        })
    }

    pub fn zeros(n_low: usize, n_high: usize) -> Self {
        Self {
            values: DVector::zeros(n_low + 2 * n_high),
            n_low,
            n_high,
        }
    }

    pub fn for_dataset(values: DVector<f64>, data: &FidelityDataset) -> Result<Self> {
        Self::new(values, data.n_low(), data.n_high())
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_low(&self) -> usize {
        self.n_low
    }

    pub fn n_high(&self) -> usize {
        self.n_high
    }

    /// `f_L(X_L)`.
    pub fn low_at_low(&self) -> &[f64] {
        &self.values.as_slice()[..self.n_low]
    }

    /// `f_L(X_H)`.
    pub fn low_at_high(&self) -> &[f64] {
        &self.values.as_slice()[self.n_low..self.n_low + self.n_high]
    }

    /// `delta(X_H)`.
    pub fn delta(&self) -> &[f64] {
        &self.values.as_slice()[self.n_low + self.n_high..]
    }

    /// `rho f_L(X_H) + delta(X_H)`.
    pub fn high_latent(&self, rho: f64) -> Vec<f64> {
        self.low_at_high()
            .iter()
            .zip(self.delta())
            .map(|(f, d)| rho * f + d)
            .collect()
    }

    /// Latent values seen by the labels: `[f_L(X_L); rho f_L(X_H) + delta]`.
    pub fn observed_latent(&self, rho: f64) -> Vec<f64> {
        let mut out = self.low_at_low().to_vec();
        out.extend(self.high_latent(rho));
        out
    }

    fn check(&self, data: &FidelityDataset) -> Result<()> {
        if self.n_low != data.n_low() || self.n_high != data.n_high() {
            return Err(Error::DimensionMismatch {
                context: "latent vector vs dataset",
                expected: data.latent_len(),
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// `lambda = sum log sigma(y~ f)` over both fidelities, `y~ = 2y - 1`.
pub fn log_likelihood(xi: &LatentVector, data: &FidelityDataset, rho: f64) -> Result<f64> {
    xi.check(data)?;
    let low: f64 = xi
        .low_at_low()
        .iter()
        .zip(&data.y_low)
        .map(|(f, y)| log_sigmoid(signed_label(*y) * f))
        .sum();
    let high: f64 = xi
        .high_latent(rho)
        .iter()
        .zip(&data.y_high)
        .map(|(f, y)| log_sigmoid(signed_label(*y) * f))
        .sum();
    Ok(low + high)
}

fn label_value(y: bool) -> f64 {
    if y {
        1.0
    } else {
        0.0
    }
}

/// `grad_xi lambda`: `y - sigma(f)` on `X_L`, `rho (y - sigma(f_H))` on
/// `f_L(X_H)`, `y - sigma(f_H)` on `delta`.
pub fn grad_log_likelihood(xi: &LatentVector, data: &FidelityDataset, rho: f64) -> Result<DVector<f64>> {
    xi.check(data)?;
    let (nl, nh) = (xi.n_low, xi.n_high);
    let mut g = DVector::zeros(xi.len());
    for (i, (f, y)) in xi.low_at_low().iter().zip(&data.y_low).enumerate() {
        g[i] = label_value(*y) - math::sigmoid(*f);
    }
    for (j, (fh, y)) in xi.high_latent(rho).iter().zip(&data.y_high).enumerate() {
        let r = label_value(*y) - math::sigmoid(*fh);
        g[nl + j] = rho * r;
        g[nl + nh + j] = r;
    }
    Ok(g)
}

/// Negative Hessian of the log-likelihood in compact form.
///
/// Dense layout:
/// ```text
/// [ A   0       0    ]
/// [ 0   rho^2 D rho D]
/// [ 0   rho D   D    ]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureW {
    /// `omega(f_L(x_i^L))`, length `n_l`.
    pub a: Vec<f64>,
    /// `omega(rho f_L(x_j^H) + delta_j)`, length `n_h`.
    pub d: Vec<f64>,
    pub rho: f64,
}

impl CurvatureW {
    pub fn n_low(&self) -> usize {
        self.a.len()
    }

    pub fn n_high(&self) -> usize {
        self.d.len()
    }

    pub fn len(&self) -> usize {
        self.a.len() + 2 * self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let (nl, nh) = (self.n_low(), self.n_high());
        let mut w = DMatrix::zeros(self.len(), self.len());
        for (i, a) in self.a.iter().enumerate() {
            w[(i, i)] = *a;
        }
        let r = self.rho;
        for (j, d) in self.d.iter().enumerate() {
            let (p, q) = (nl + j, nl + nh + j);
            w[(p, p)] = r * r * d;
            w[(p, q)] = r * d;
            w[(q, p)] = r * d;
            w[(q, q)] = *d;
        }
        w
    }

    /// `W v` without materializing `W`.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let (nl, nh) = (self.n_low(), self.n_high());
        let mut out = DVector::zeros(v.len());
        for (i, a) in self.a.iter().enumerate() {
            out[i] = a * v[i];
        }
        for (j, d) in self.d.iter().enumerate() {
            let (p, q) = (nl + j, nl + nh + j);
            let u = d * (self.rho * v[p] + v[q]);
            out[p] = self.rho * u;
            out[q] = u;
        }
        out
    }

    /// Structured symmetric square root.
    pub fn sqrt(&self) -> WSqrt {
        let c = 1.0 / math::sqrt(self.rho * self.rho + 1.0);
        WSqrt {
            sqrt_a: self.a.iter().map(|a| math::sqrt(*a)).collect(),
            pair_scale: self.d.iter().map(|d| c * math::sqrt(*d)).collect(),
            rho: self.rho,
        }
    }
}

/// `A = omega(f_L(X_L))`, `D = omega(rho f_L(X_H) + delta)`.
pub fn curvature(xi: &LatentVector, data: &FidelityDataset, rho: f64) -> Result<CurvatureW> {
    xi.check(data)?;
    Ok(CurvatureW {
        a: xi.low_at_low().iter().map(|f| sigmoid_family(*f).1).collect(),
        d: xi.high_latent(rho).iter().map(|f| sigmoid_family(*f).1).collect(),
        rho,
    })
}

/// Symmetric square root of `W`:
/// `blockdiag(A^{1/2}, (rho^2+1)^{-1/2} [[rho^2, rho], [rho, 1]] (x) D^{1/2})`.
///
/// Each high-fidelity pair block is rank one,
/// `c sqrt(D_j) [rho, 1]^T [rho, 1]`, which is what the `apply_*` methods use.
#[derive(Debug, Clone, PartialEq)]
pub struct WSqrt {
    sqrt_a: Vec<f64>,
    /// `sqrt(D_j) / sqrt(rho^2 + 1)`.
    pair_scale: Vec<f64>,
    rho: f64,
}

impl WSqrt {
    fn n_low(&self) -> usize {
        self.sqrt_a.len()
    }

    fn n_high(&self) -> usize {
        self.pair_scale.len()
    }

    pub fn len(&self) -> usize {
        self.n_low() + 2 * self.n_high()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let (nl, nh) = (self.n_low(), self.n_high());
        let mut out = DVector::zeros(v.len());
        for (i, s) in self.sqrt_a.iter().enumerate() {
            out[i] = s * v[i];
        }
        for (j, c) in self.pair_scale.iter().enumerate() {
            let (p, q) = (nl + j, nl + nh + j);
            let u = c * (self.rho * v[p] + v[q]);
            out[p] = self.rho * u;
            out[q] = u;
        }
        out
    }

    /// `S X` (mixes rows).
    pub fn apply_left(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (nl, nh) = (self.n_low(), self.n_high());
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for col in 0..x.ncols() {
            for (i, s) in self.sqrt_a.iter().enumerate() {
                out[(i, col)] = s * x[(i, col)];
            }
            for (j, c) in self.pair_scale.iter().enumerate() {
                let (p, q) = (nl + j, nl + nh + j);
                let u = c * (self.rho * x[(p, col)] + x[(q, col)]);
                out[(p, col)] = self.rho * u;
                out[(q, col)] = u;
            }
        }
        out
    }

    /// `X S` (mixes columns).
    pub fn apply_right(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (nl, nh) = (self.n_low(), self.n_high());
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for (i, s) in self.sqrt_a.iter().enumerate() {
            out.column_mut(i).axpy(*s, &x.column(i), 0.0);
        }
        for (j, c) in self.pair_scale.iter().enumerate() {
            let (p, q) = (nl + j, nl + nh + j);
            let u = (x.column(p) * self.rho + x.column(q)) * *c;
            out.column_mut(p).axpy(self.rho, &u, 0.0);
            out.column_mut(q).copy_from(&u);
        }
        out
    }

    /// `S X S` for symmetric `X`.
    pub fn sandwich(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply_left(&self.apply_right(x))
    }

    pub fn dense(&self) -> DMatrix<f64> {
        self.apply_left(&DMatrix::identity(self.len(), self.len()))
    }
}

/// Dense `W^{1/2}`.
pub fn w_sqrt(w: &CurvatureW) -> DMatrix<f64> {
    w.sqrt().dense()
}

/// Explicit (fixed-`xi`) derivatives with respect to `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoPartials {
    /// `d(grad_xi lambda)/d rho`.
    pub d_grad_lambda_d_rho: DVector<f64>,
    /// `d lambda / d rho`.
    pub d_lambda_d_rho: f64,
    /// `dW/d rho`, dense.
    pub d_w_d_rho: DMatrix<f64>,
}

/// Compact form of [`RhoPartials`]: the `dW/drho` part is kept as the two
/// diagonal sequences that multiply `[[rho^2, rho], [rho, 1]]` and
/// `[[2 rho, 1], [1, 0]]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RhoPartialsCompact {
    pub d_grad: DVector<f64>,
    pub d_lambda: f64,
    /// `dD/drho|explicit = f_L(x_j^H) zeta(f_H_j)`.
    pub d_d: Vec<f64>,
    /// `D` itself.
    pub d: Vec<f64>,
}

impl RhoPartialsCompact {
    /// Coefficients of the `(p,p)`, `(p,q)`, `(q,q)` entries of `dW/drho`
    /// for high-fidelity pair `j`.
    pub fn pair_entries(&self, j: usize, rho: f64) -> (f64, f64, f64) {
        let (dd, d) = (self.d_d[j], self.d[j]);
        (rho * rho * dd + 2.0 * rho * d, rho * dd + d, dd)
    }
}

pub(crate) fn rho_partials_compact(
    xi: &LatentVector,
    data: &FidelityDataset,
    rho: f64,
) -> Result<RhoPartialsCompact> {
    xi.check(data)?;
    let (nl, nh) = (xi.n_low, xi.n_high);
    let mut d_grad = DVector::zeros(xi.len());
    let mut d_lambda = 0.0;
    let mut d_d = Vec::with_capacity(nh);
    let mut d = Vec::with_capacity(nh);
    for j in 0..nh {
        let fl = xi.low_at_high()[j];
        let fh = rho * fl + xi.delta()[j];
        let y = data.y_high[j];
        let (s, w, z) = sigmoid_family(fh);
        let r = label_value(y) - s;
        d_grad[nl + j] = r - rho * fl * w;
        d_grad[nl + nh + j] = -fl * w;
        let yt = signed_label(y);
        d_lambda += yt * fl * (1.0 - math::sigmoid(yt * fh));
        d_d.push(fl * z);
        d.push(w);
    }
    Ok(RhoPartialsCompact {
        d_grad,
        d_lambda,
        d_d,
        d,
    })
}

/// Explicit `rho`-derivatives of `grad lambda`, `lambda` and `W` at fixed `xi`.
pub fn explicit_rho_terms(xi: &LatentVector, data: &FidelityDataset, rho: f64) -> Result<RhoPartials> {
    let c = rho_partials_compact(xi, data, rho)?;
    let (nl, nh) = (xi.n_low, xi.n_high);
    let mut dw = DMatrix::zeros(xi.len(), xi.len());
    for j in 0..nh {
        let (p, q) = (nl + j, nl + nh + j);
        let (pp, pq, qq) = c.pair_entries(j, rho);
        dw[(p, p)] = pp;
        dw[(p, q)] = pq;
        dw[(q, p)] = pq;
        dw[(q, q)] = qq;
    }
    Ok(RhoPartials {
        d_grad_lambda_d_rho: c.d_grad,
        d_lambda_d_rho: c.d_lambda,
        d_w_d_rho: dw,
    })
}

/// Read access to entries of a symmetric matrix, so contractions can run on a
/// lazily evaluated `(K^{-1} + W)^{-1}`.
pub trait SymmetricEntries {
    fn size(&self) -> usize;
    fn entry(&self, i: usize, j: usize) -> f64;
}

impl SymmetricEntries for DMatrix<f64> {
    fn size(&self) -> usize {
        self.nrows()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self[(i, j)]
    }
}

/// `sum_elements(M o dW/dxi_i)` for every coordinate `i`.
///
/// `dW/dxi_i` has at most four non-zero entries, so each component reads at
/// most three entries of `M`.
pub fn third_derivative_contraction<M: SymmetricEntries + ?Sized>(
    m: &M,
    xi: &LatentVector,
    data: &FidelityDataset,
    rho: f64,
) -> Result<DVector<f64>> {
    xi.check(data)?;
    if m.size() != xi.len() {
        return Err(Error::DimensionMismatch {
            context: "contraction matrix",
            expected: xi.len(),
            found: m.size(),
        });
    }
    let (nl, nh) = (xi.n_low, xi.n_high);
    let mut out = DVector::zeros(xi.len());
    for (i, f) in xi.low_at_low().iter().enumerate() {
        out[i] = m.entry(i, i) * sigmoid_family(*f).2;
    }
    let fh = xi.high_latent(rho);
    for (j, &f) in fh.iter().enumerate() {
        let (p, q) = (nl + j, nl + nh + j);
        let zeta = sigmoid_family(f).2;
        let (mpp, mpq, mqq) = (m.entry(p, p), m.entry(p, q), m.entry(q, q));
        let rho2 = rho * rho;
        out[p] = (mpp * rho2 * rho + 2.0 * mpq * rho2 + mqq * rho) * zeta;
        out[q] = (mqq + 2.0 * mpq * rho + mpp * rho2) * zeta;
    }
    Ok(out)
}

/// Dense `dW/dxi_i`; the slow reference used by tests.
pub fn dense_dw_dxi(xi: &LatentVector, rho: f64, i: usize) -> DMatrix<f64> {
    let (nl, nh) = (xi.n_low, xi.n_high);
    let n = xi.len();
    let mut out = DMatrix::zeros(n, n);
    if i < nl {
        out[(i, i)] = sigmoid_family(xi.values[i]).2;
        return out;
    }
    let j = if i < nl + nh { i - nl } else { i - nl - nh };
    let (p, q) = (nl + j, nl + nh + j);
    let zeta = sigmoid_family(rho * xi.values[p] + xi.values[q]).2;
    // d f_H / d xi_i is rho on the f_L(X_H) block and 1 on the delta block.
    let chain = if i < nl + nh { rho } else { 1.0 };
    let dd = zeta * chain;
    out[(p, p)] = rho * rho * dd;
    out[(p, q)] = rho * dd;
    out[(q, p)] = rho * dd;
    out[(q, q)] = dd;
    out
}
