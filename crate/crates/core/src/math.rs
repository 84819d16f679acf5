//! Scalar helpers. Everything routes through `libm` so `std` and `no_std`
//! builds produce bit-identical numbers.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// Logistic sigmoid, evaluated branchwise so neither side overflows.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    }
}

/// `log(sigmoid(z))` without cancellation for large `|z|`.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -ln_1p(exp(-z))
    } else {
        z - ln_1p(exp(z))
    }
}

/// Returns `(sigma, omega, zeta)`: the sigmoid and its first two derivatives.
///
/// `omega = sigma (1 - sigma)` and `zeta = sigma (1 - sigma)(1 - 2 sigma)`.
/// `1 - sigma` is taken as `sigma(-z)` so saturation does not lose digits.
#[inline]
pub fn sigmoid_family(z: f64) -> (f64, f64, f64) {
    let s = sigmoid(z);
    let c = sigmoid(-z);
    let w = s * c;
    (s, w, w * (c - s))
}

/// Sign of `y` as `+1` / `-1`.
#[inline]
pub fn signed_label(y: bool) -> f64 {
    if y {
        1.0
    } else {
        -1.0
    }
}
