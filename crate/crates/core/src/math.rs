//! Scalar special functions shared by the rate model and the coder.

use libm::{erfc, exp};

pub const SQRT_2: f64 = core::f64::consts::SQRT_2;
pub const LN_2: f64 = core::f64::consts::LN_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * exp(-0.5 * z * z)
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `Phi(hi) - Phi(lo)` for `lo <= hi`, evaluated on whichever tail keeps the
/// two terms small so the subtraction does not cancel.
#[inline]
pub fn normal_mass(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        0.5 * (erfc(lo / SQRT_2) - erfc(hi / SQRT_2))
    } else if hi <= 0.0 {
        0.5 * (erfc(-hi / SQRT_2) - erfc(-lo / SQRT_2))
    } else {
        1.0 - 0.5 * erfc(hi / SQRT_2) - 0.5 * erfc(-lo / SQRT_2)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}

/// Round half away from zero.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    libm::round(x)
}
