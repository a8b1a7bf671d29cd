//! Agreement measures between the analytic mixture, Monte Carlo samples
//! and baselines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{FrequencyMixture, SolveError};
use crate::mcs::{McsError, McsResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("sample set is empty")]
    EmptySamples,
    #[error("sample set contains a non-finite value")]
    NonFiniteSample,
    #[error("proportion {0} is outside (0, 1)")]
    AlphaOutOfRange(f64),
    #[error("quantile function returned NaN at α = {0}")]
    NanQuantile(f64),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Mcs(#[from] McsError),
}

/// Proportion deviation `PD^α = (1/N) Σ 1(x_i ≤ q^α) − α` per nominal α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdCurve {
    pub alphas: Vec<f64>,
    pub deviations: Vec<f64>,
}

impl PdCurve {
    /// Largest `|PD^α|` over the curve.
    pub fn max_abs(&self) -> f64 {
        self.deviations.iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// 0.05, 0.10, …, 0.95.
pub fn default_alphas() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(MetricsError::NonFiniteSample);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

pub fn proportion_deviation<F>(
    samples: &[f64],
    quantile_fn: F,
    alphas: &[f64],
) -> Result<PdCurve, MetricsError>
where
    F: Fn(f64) -> f64,
{
    let s = sorted(samples)?;
    let n = s.len() as f64;
    let mut deviations = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(MetricsError::AlphaOutOfRange(alpha));
        }
        let q = quantile_fn(alpha);
        if q.is_nan() {
            return Err(MetricsError::NanQuantile(alpha));
        }
        let hits = s.partition_point(|&x| x <= q);
        deviations.push(hits as f64 / n - alpha);
    }
    Ok(PdCurve {
        alphas: alphas.to_vec(),
        deviations,
    })
}

/// One-dimensional Wasserstein-1 distance between two empirical measures.
pub fn wasserstein_1d(samples_a: &[f64], samples_b: &[f64]) -> Result<f64, MetricsError> {
    let a = sorted(samples_a)?;
    let b = sorted(samples_b)?;
    if a.len() == b.len() {
        let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(total / a.len() as f64);
    }
    // ∫ |F_a − F_b| over the merged support.
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// `sup_x |F_n(x) − F(x)|` of the samples against a continuous CDF.
pub fn kolmogorov_distance<F>(samples: &[f64], cdf: F) -> Result<f64, MetricsError>
where
    F: Fn(f64) -> f64,
{
    let s = sorted(samples)?;
    let n = s.len() as f64;
    let mut worst: f64 = 0.0;
    let mut i = 0;
    while i < s.len() {
        let x = s[i];
        let mut j = i;
        while j < s.len() && s[j] == x {
            j += 1;
        }
        let f = cdf(x);
        worst = worst.max((f - i as f64 / n).abs()).max((f - j as f64 / n).abs());
        i = j;
    }
    Ok(worst)
}

/// Unbiased sample standard deviation.
pub fn sample_std(samples: &[f64]) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    if samples.len() == 1 {
        return Ok(0.0);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok((ss / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StddevRow {
    pub time: f64,
    pub analytic: f64,
    pub empirical: f64,
    /// `|analytic − empirical| / empirical`.
    pub relative_error: f64,
}

pub fn stddev_comparison(
    mix: &FrequencyMixture,
    mcs: &McsResult,
    times: &[f64],
) -> Result<Vec<StddevRow>, MetricsError> {
    times
        .iter()
        .map(|&t| {
            let analytic = mix.mix_std(t)?;
            let empirical = sample_std(&mcs.df_samples(t)?)?;
            let relative_error = if empirical > 0.0 {
                (analytic - empirical).abs() / empirical
            } else if analytic == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            Ok(StddevRow {
                time: t,
                analytic,
                empirical,
                relative_error,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pd_with_infinite_quantiles() {
        let pd = proportion_deviation(&[1.0, 2.0, 3.0], |_| f64::INFINITY, &[0.1, 0.5, 0.9]).unwrap();
        for (a, d) in pd.alphas.iter().zip(&pd.deviations) {
            assert!((d - (1.0 - a)).abs() < 1e-15);
        }
        assert!((pd.max_abs() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn pd_at_median() {
        let s: Vec<f64> = (0..101).map(|k| k as f64).collect();
        let pd = proportion_deviation(&s, |_| 50.0, &[0.5]).unwrap();
        assert!(pd.deviations[0].abs() <= 1.0 / 101.0);
    }

    #[test]
    fn pd_errors() {
        assert_eq!(
            proportion_deviation(&[], |_| 0.0, &[0.5]),
            Err(MetricsError::EmptySamples)
        );
        assert_eq!(
            proportion_deviation(&[1.0], |_| 0.0, &[1.0]),
            Err(MetricsError::AlphaOutOfRange(1.0))
        );
    }

    #[test]
    fn wasserstein_basics() {
        let a = [0.3, -1.0, 2.0];
        assert_eq!(wasserstein_1d(&a, &a).unwrap(), 0.0);
        assert!((wasserstein_1d(&[1.5], &[-0.5]).unwrap() - 2.0).abs() < 1e-15);
        // unequal sizes: point mass at 0 vs two points at 0 and 1
        assert!((wasserstein_1d(&[0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((wasserstein_1d(&[0.0, 1.0], &[0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(wasserstein_1d(&[], &[1.0]), Err(MetricsError::EmptySamples));
    }

    #[test]
    fn unequal_path_agrees_with_order_statistics() {
        // duplicating every sample leaves the measure unchanged
        let a = [0.1, 0.7, -0.4, 2.2];
        let b = [1.0, 0.0, 0.5, -0.3];
        let b2: Vec<f64> = b.iter().chain(b.iter()).copied().collect();
        let equal = wasserstein_1d(&a, &b).unwrap();
        let merged = wasserstein_1d(&a, &b2).unwrap();
        assert!((equal - merged).abs() < 1e-14);
    }

    #[test]
    fn kolmogorov_uniform() {
        let s = [0.25, 0.75];
        let d = kolmogorov_distance(&s, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sample_std_known() {
        assert!((sample_std(&[1.0, 3.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(sample_std(&[4.0]).unwrap(), 0.0);
    }
}
