//! Training data containers.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fidelity {
    Low,
    High,
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fidelity::Low => f.write_str("low"),
            Fidelity::High => f.write_str("high"),
        }
    }
}

/// Low- and high-fidelity samples `D_L`, `D_H`. Feature matrices hold one
/// point per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityDataset {
    pub x_low: DMatrix<f64>,
    pub y_low: Vec<bool>,
    pub x_high: DMatrix<f64>,
    pub y_high: Vec<bool>,
}

impl FidelityDataset {
    pub fn new(
        x_low: DMatrix<f64>,
        y_low: Vec<bool>,
        x_high: DMatrix<f64>,
        y_high: Vec<bool>,
    ) -> Result<Self> {
        let data = Self {
            x_low,
            y_low,
            x_high,
            y_high,
        };
        data.validate_shapes()?;
        Ok(data)
    }

    /// A dataset with no high-fidelity points.
    pub fn low_only(x: DMatrix<f64>, y: Vec<bool>) -> Result<Self> {
        let d = x.ncols();
        Self::new(x, y, DMatrix::zeros(0, d), Vec::new())
    }

    /// A dataset with no low-fidelity points.
    pub fn high_only(x: DMatrix<f64>, y: Vec<bool>) -> Result<Self> {
        let d = x.ncols();
        Self::new(DMatrix::zeros(0, d), Vec::new(), x, y)
    }

    pub fn n_low(&self) -> usize {
        self.y_low.len()
    }

    pub fn n_high(&self) -> usize {
        self.y_high.len()
    }

    /// Length of the stacked latent vector, `n_l + 2 n_h`.
    pub fn latent_len(&self) -> usize {
        self.n_low() + 2 * self.n_high()
    }

    pub fn dim(&self) -> usize {
        if self.n_low() > 0 {
            self.x_low.ncols()
        } else {
            self.x_high.ncols()
        }
    }

    /// `[X_L; X_H]`, the inputs of the low-fidelity latent.
    pub fn stacked_inputs(&self) -> DMatrix<f64> {
        let d = self.dim();
        let (nl, nh) = (self.n_low(), self.n_high());
        DMatrix::from_fn(nl + nh, d, |i, k| {
            if i < nl {
                self.x_low[(i, k)]
            } else {
                self.x_high[(i - nl, k)]
            }
        })
    }

    pub fn validate_shapes(&self) -> Result<()> {
        if self.x_low.nrows() != self.y_low.len() {
            return Err(Error::DimensionMismatch {
                context: "low-fidelity labels",
                expected: self.x_low.nrows(),
                found: self.y_low.len(),
            });
        }
        if self.x_high.nrows() != self.y_high.len() {
            return Err(Error::DimensionMismatch {
                context: "high-fidelity labels",
                expected: self.x_high.nrows(),
                found: self.y_high.len(),
            });
        }
        if self.n_low() > 0 && self.n_high() > 0 && self.x_low.ncols() != self.x_high.ncols() {
            return Err(Error::DimensionMismatch {
                context: "feature dimensionality across fidelities",
                expected: self.x_low.ncols(),
                found: self.x_high.ncols(),
            });
        }
        if self
            .x_low
            .iter()
            .chain(self.x_high.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("features must be finite".into()));
        }
        Ok(())
    }

    /// Training precondition: every non-empty fidelity has both classes, and
    /// at least one fidelity is non-empty.
    pub fn validate_for_training(&self) -> Result<()> {
        self.validate_shapes()?;
        if self.n_low() == 0 && self.n_high() == 0 {
            return Err(Error::InvalidInput("dataset has no training points".into()));
        }
        for (fidelity, y) in [(Fidelity::Low, &self.y_low), (Fidelity::High, &self.y_high)] {
            if !y.is_empty() && !has_both_classes(y) {
                return Err(Error::SingleClass { fidelity });
            }
        }
        Ok(())
    }

    /// Same inputs, every label complemented.
    pub fn flipped(&self) -> Self {
        Self {
            x_low: self.x_low.clone(),
            y_low: self.y_low.iter().map(|y| !y).collect(),
            x_high: self.x_high.clone(),
            y_high: self.y_high.iter().map(|y| !y).collect(),
        }
    }
}

pub fn has_both_classes(y: &[bool]) -> bool {
    y.iter().any(|v| *v) && y.iter().any(|v| !*v)
}

/// Single-fidelity sample `(X, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SfDataset {
    pub x: DMatrix<f64>,
    pub y: Vec<bool>,
}

impl SfDataset {
    pub fn new(x: DMatrix<f64>, y: Vec<bool>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "labels",
                expected: x.nrows(),
                found: y.len(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn validate_for_training(&self) -> Result<()> {
        if !has_both_classes(&self.y) {
            return Err(Error::SingleClass {
                fidelity: Fidelity::High,
            });
        }
        Ok(())
    }

    /// The high-fidelity part of a multi-fidelity dataset.
    pub fn from_high(data: &FidelityDataset) -> Self {
        Self {
            x: data.x_high.clone(),
            y: data.y_high.clone(),
        }
    }

    /// Both fidelities concatenated as one sample, low first.
    pub fn concatenated(data: &FidelityDataset) -> Self {
        let mut y = data.y_low.clone();
        y.extend_from_slice(&data.y_high);
        Self {
            x: data.stacked_inputs(),
            y,
        }
    }
}
