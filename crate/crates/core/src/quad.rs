//! Adaptive Gauss–Kronrod (7, 15) quadrature for scalar and matrix integrands.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not reach tolerance {tol:e} within {max_intervals} intervals (estimated error {estimate:e})")]
    NotConverged {
        tol: f64,
        max_intervals: usize,
        estimate: f64,
    },
    #[error("integrand returned a non-finite value at {at}")]
    NonFinite { at: f64 },
}

/// Values that can be integrated: closed under addition and real scaling,
/// with a norm for error control.
pub trait Integrand: Clone {
    fn zero_like(&self) -> Self;
    fn add_scaled(&mut self, other: &Self, scale: f64);
    fn norm(&self) -> f64;
    fn is_finite(&self) -> bool;
}

impl Integrand for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        *self += other * scale;
    }
    fn norm(&self) -> f64 {
        self.abs()
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl Integrand for DMatrix<f64> {
    fn zero_like(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        *self += other * scale;
    }
    fn norm(&self) -> f64 {
        DMatrix::norm(self)
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_intervals: 2000,
        }
    }
}

struct Panel<V> {
    a: f64,
    b: f64,
    value: V,
    error: f64,
}

fn gk15<V, F>(f: &F, a: f64, b: f64) -> Result<(V, f64), QuadError>
where
    V: Integrand,
    F: Fn(f64) -> V,
{
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    if !fc.is_finite() {
        return Err(QuadError::NonFinite { at: centre });
    }
    let mut kronrod = fc.zero_like();
    let mut gauss = fc.zero_like();
    kronrod.add_scaled(&fc, WGK[7]);
    gauss.add_scaled(&fc, WG[3]);
    for (k, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let lo = f(centre - dx);
        let hi = f(centre + dx);
        if !lo.is_finite() {
            return Err(QuadError::NonFinite { at: centre - dx });
        }
        if !hi.is_finite() {
            return Err(QuadError::NonFinite { at: centre + dx });
        }
        kronrod.add_scaled(&lo, w);
        kronrod.add_scaled(&hi, w);
        if k % 2 == 1 {
            gauss.add_scaled(&lo, WG[k / 2]);
            gauss.add_scaled(&hi, WG[k / 2]);
        }
    }
    let mut diff = kronrod.clone();
    diff.add_scaled(&gauss, -1.0);
    let err = diff.norm() * half.abs();
    let mut value = kronrod.zero_like();
    value.add_scaled(&kronrod, half);
    Ok((value, err))
}

/// Integrates `f` over `[a, b]` by globally adaptive bisection.
pub fn integrate<V, F>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<V, QuadError>
where
    V: Integrand,
    F: Fn(f64) -> V,
{
    let (value, error) = gk15(&f, a, b)?;
    let mut panels = vec![Panel { a, b, value, error }];
    loop {
        let mut total = panels[0].value.zero_like();
        let mut total_err = 0.0;
        for p in &panels {
            total.add_scaled(&p.value, 1.0);
            total_err += p.error;
        }
        let target = opts.abs_tol.max(opts.rel_tol * total.norm());
        if total_err <= target {
            return Ok(total);
        }
        if panels.len() >= opts.max_intervals {
            return Err(QuadError::NotConverged {
                tol: target,
                max_intervals: opts.max_intervals,
                estimate: total_err,
            });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // Interval cannot be split further in floating point.
            return Err(QuadError::NotConverged {
                tol: target,
                max_intervals: opts.max_intervals,
                estimate: total_err,
            });
        }
        let (lv, le) = gk15(&f, p.a, mid)?;
        let (rv, re) = gk15(&f, mid, p.b)?;
        panels.push(Panel {
            a: p.a,
            b: mid,
            value: lv,
            error: le,
        });
        panels.push(Panel {
            a: mid,
            b: p.b,
            value: rv,
            error: re,
        });
    }
}

/// Integrates `f` over `(-∞, upper]` via the substitution `z = upper - (1 - s) / s`.
pub fn integrate_lower_tail<V, F>(f: F, upper: f64, opts: QuadOptions) -> Result<V, QuadError>
where
    V: Integrand,
    F: Fn(f64) -> V,
{
    let probe = f(upper);
    let g = |s: f64| {
        if s <= 0.0 {
            return probe.zero_like();
        }
        let z = upper - (1.0 - s) / s;
        let mut v = probe.zero_like();
        v.add_scaled(&f(z), 1.0 / (s * s));
        v
    };
    integrate(g, 0.0, 1.0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v: f64 = integrate(|x| x.powi(6) - 2.0 * x, 0.0, 2.0, QuadOptions::default()).unwrap();
        assert!((v - (128.0 / 7.0 - 4.0)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_lower_tail() {
        let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let v: f64 = integrate_lower_tail(pdf, 0.0, QuadOptions::default()).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn matrix_integrand() {
        let f = |s: f64| DMatrix::from_row_slice(2, 2, &[1.0, s, s * s, s.exp()]);
        let v: DMatrix<f64> = integrate(f, 0.0, 1.0, QuadOptions::default()).unwrap();
        assert!((v[(0, 1)] - 0.5).abs() < 1e-13);
        assert!((v[(1, 1)] - (1f64.exp() - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn non_finite_is_reported() {
        let r: Result<f64, _> = integrate(|x| 1.0 / x, 0.0, 1.0, QuadOptions::default());
        assert!(matches!(r, Err(QuadError::NonFinite { .. }) | Err(QuadError::NotConverged { .. })));
    }
}
