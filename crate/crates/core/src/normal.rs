//! Scalar Gaussian density and distribution functions.
//!
//! A zero variance is treated as a point mass at the mean: the CDF becomes a
//! right-continuous step and the density is zero away from the mean.

use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};

/// Density of N(mean, variance) at `x`.
pub fn pdf(x: f64, mean: f64, variance: f64) -> f64 {
    if variance <= 0.0 {
        return if x == mean { f64::INFINITY } else { 0.0 };
    }
    let z = x - mean;
    (-z * z / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
}

/// Log-density of N(mean, variance) at `x`; `variance` must be positive.
pub fn ln_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let z = x - mean;
    -0.5 * (2.0 * PI * variance).ln() - z * z / (2.0 * variance)
}

/// Distribution function of N(mean, variance) at `x`.
pub fn cdf(x: f64, mean: f64, variance: f64) -> f64 {
    if variance <= 0.0 {
        return if x >= mean { 1.0 } else { 0.0 };
    }
    let z = (x - mean) / variance.sqrt();
    0.5 * erfc(-z / SQRT_2)
}
