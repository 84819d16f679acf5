//! Central finite differences.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Component-wise central differences of `f` at `x`. A non-finite
/// evaluation (or an error from `f`) is reported against the coordinate
/// being perturbed.
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(alloc::format!(
            "step must be positive, got {step}"
        )));
    }
    let mut point = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        point[i] = x[i] + step;
        let plus = f(&point).map_err(|_| Error::NonFinite { coordinate: i })?;
        point[i] = x[i] - step;
        let minus = f(&point).map_err(|_| Error::NonFinite { coordinate: i })?;
        point[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { coordinate: i });
        }
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps gradients that are
/// zero up to rounding from producing meaningless ratios.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
