//! Number formatting shared by every text output.

/// 17 significant digits: enough to reproduce any `f64` exactly.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}
