//! Standard normal tail probabilities.
//!
//! `libm::erfc` is the FreeBSD/musl port with sub-ulp error on the real
//! line, so the tails below are accurate well past 1e-12 absolute.

use std::f64::consts::SQRT_2;

/// Upper tail `Q(z) = P(Z > z)` of the standard normal.
pub fn upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

/// Two-sided tail `P(|Z| > z) = 2·Q(z)`.
pub fn two_sided_tail(z: f64) -> f64 {
    libm::erfc(z / SQRT_2)
}

/// Standard normal density.
pub fn density(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`upper_tail`] for `p ∈ (0, 1)`.
pub fn upper_tail_inverse(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return f64::NAN;
    }
    SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// Per-test threshold in standard errors that keeps the family-wise
/// one-sided false-alarm rate of `tests` checks at that of a single
/// `family_sigmas` check (Bonferroni).
pub fn bonferroni_sigmas(family_sigmas: f64, tests: usize) -> f64 {
    if tests <= 1 {
        return family_sigmas;
    }
    upper_tail_inverse(upper_tail(family_sigmas) / tests as f64)
}
