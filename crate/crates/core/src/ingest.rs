//! Predictive quantile series of wind power and inverse-transform sampling.
//!
//! A series is a list of `(proportion, value)` knots of the predictive
//! distribution at one forecast instant. Between knots the quantile function
//! is linear; outside `[α₁, α_R]` the first and last segments are extended
//! and clamped to the physical power bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("proportions and values differ in length ({proportions} vs {values})")]
    LengthMismatch { proportions: usize, values: usize },
    #[error("a quantile series needs at least 2 knots, got {0}")]
    TooFewKnots(usize),
    #[error("proportion {value} at index {index} is outside (0, 1)")]
    ProportionOutOfRange { index: usize, value: f64 },
    #[error("proportions must be strictly increasing (index {index})")]
    NonMonotoneProportions { index: usize },
    #[error("quantile values cross at index {index}: {previous} > {value}")]
    CrossingQuantiles {
        index: usize,
        previous: f64,
        value: f64,
    },
    #[error("non-finite quantile value at index {index}")]
    NonFiniteValue { index: usize },
    #[error("probability {0} is outside (0, 1)")]
    UOutOfRange(f64),
    #[error("power bounds [{lower}, {upper}] are empty")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("sample count must be at least 1")]
    ZeroSamples,
    #[error("malformed quantile record: {0}")]
    Malformed(String),
}

/// On-disk record: `proportions`, `values`, `horizon_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawQuantileSeries {
    pub proportions: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub horizon_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSeries {
    proportions: Vec<f64>,
    values: Vec<f64>,
    horizon_id: String,
    lower: f64,
    upper: f64,
}

impl QuantileSeries {
    /// Default per-unit bounds applied to extrapolated tails.
    pub const DEFAULT_LOWER: f64 = 0.0;
    pub const DEFAULT_UPPER: f64 = 1.0;

    pub fn parse(raw: &RawQuantileSeries) -> Result<Self, IngestError> {
        let RawQuantileSeries {
            proportions,
            values,
            horizon_id,
        } = raw;
        if proportions.len() != values.len() {
            return Err(IngestError::LengthMismatch {
                proportions: proportions.len(),
                values: values.len(),
            });
        }
        if proportions.len() < 2 {
            return Err(IngestError::TooFewKnots(proportions.len()));
        }
        for (index, &p) in proportions.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(IngestError::ProportionOutOfRange { index, value: p });
            }
            if index > 0 && p <= proportions[index - 1] {
                return Err(IngestError::NonMonotoneProportions { index });
            }
        }
        for (index, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(IngestError::NonFiniteValue { index });
            }
            if index > 0 && v < values[index - 1] {
                return Err(IngestError::CrossingQuantiles {
                    index,
                    previous: values[index - 1],
                    value: v,
                });
            }
        }
        Ok(Self {
            proportions: proportions.clone(),
            values: values.clone(),
            horizon_id: horizon_id.clone(),
            lower: Self::DEFAULT_LOWER,
            upper: Self::DEFAULT_UPPER,
        })
    }

    /// Parses the JSON form of [`RawQuantileSeries`] and validates it.
    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let raw: RawQuantileSeries =
            serde_json::from_str(text).map_err(|e| IngestError::Malformed(e.to_string()))?;
        Self::parse(&raw)
    }

    /// Replaces the tail clamp interval `[lower, upper]`.
    pub fn with_bounds(mut self, lower: f64, upper: f64) -> Result<Self, IngestError> {
        if !(lower < upper) {
            return Err(IngestError::InvalidBounds { lower, upper });
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon_id(&self) -> &str {
        &self.horizon_id
    }

    /// Number of knots R.
    pub fn len(&self) -> usize {
        self.proportions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proportions.is_empty()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn to_raw(&self) -> RawQuantileSeries {
        RawQuantileSeries {
            proportions: self.proportions.clone(),
            values: self.values.clone(),
            horizon_id: self.horizon_id.clone(),
        }
    }

    /// Quantile function F⁻¹(u).
    pub fn inverse_cdf(&self, u: f64) -> Result<f64, IngestError> {
        if !(u > 0.0 && u < 1.0) {
            return Err(IngestError::UOutOfRange(u));
        }
        Ok(self.quantile_unchecked(u))
    }

    fn quantile_unchecked(&self, u: f64) -> f64 {
        let p = &self.proportions;
        let q = &self.values;
        let r = p.len();
        let segment = |i: usize| {
            let slope = (q[i + 1] - q[i]) / (p[i + 1] - p[i]);
            q[i] + slope * (u - p[i])
        };
        if u < p[0] {
            // Never clamp past the first knot itself.
            let floor = self.lower.min(q[0]);
            segment(0).max(floor)
        } else if u > p[r - 1] {
            let ceil = self.upper.max(q[r - 1]);
            segment(r - 2).min(ceil)
        } else {
            let i = p.partition_point(|&x| x <= u).clamp(1, r - 1) - 1;
            segment(i)
        }
    }

    /// Draws `count` values by inverse-transform sampling.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<f64>, IngestError> {
        if count == 0 {
            return Err(IngestError::ZeroSamples);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| {
                // open interval (0, 1)
                let u = loop {
                    let u: f64 = rng.random();
                    if u > 0.0 {
                        break u;
                    }
                };
                self.quantile_unchecked(u)
            })
            .collect())
    }
}
