//! Itô-process representations of wind power.
//!
//! Each Gaussian mixture component `(ω, μ, σ²)` becomes an OU sub-process
//!
//! ```text
//! dP = (−λ·P + λ·μ) dt + √(2λσ²) dW
//! ```
//!
//! whose stationary law is exactly `N(μ, σ²)`. With `λ = 1` this is the
//! unit-rate form; the collection of sub-processes, each carrying its
//! component weight, is the generalized Itô process of the mixture.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::Gmm;
use crate::quad::{self, QuadError, QuadOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ItoError {
    #[error("drift rate must be positive and finite, got {0}")]
    InvalidDriftRate(f64),
    #[error("density {density:e} at {x} is too small to divide by")]
    VanishingDensity { x: f64, density: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItoComponent {
    pub drift_rate: f64,
    pub drift_target: f64,
    /// Diffusion coefficient τ (per-unit power per √s).
    pub diffusion: f64,
    pub weight: f64,
}

impl ItoComponent {
    /// Drift constant `c` of the linear drift `−λP + c`.
    pub fn drift_constant(&self) -> f64 {
        self.drift_rate * self.drift_target
    }

    pub fn drift(&self, p: f64) -> f64 {
        -self.drift_rate * p + self.drift_constant()
    }

    pub fn stationary_variance(&self) -> f64 {
        self.diffusion * self.diffusion / (2.0 * self.drift_rate)
    }

    /// Exact variance at time `t` when started from a fixed value.
    pub fn variance_at(&self, t: f64) -> f64 {
        self.stationary_variance() * (1.0 - (-2.0 * self.drift_rate * t).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedItoProcess {
    pub components: Vec<ItoComponent>,
    /// Shared starting value of P_w.
    pub initial_value: f64,
}

impl GeneralizedItoProcess {
    /// Decomposes `gmm` into OU sub-processes sharing `drift_rate`.
    /// The initial value defaults to the mixture mean.
    pub fn from_gmm(gmm: &Gmm, drift_rate: f64) -> Result<Self, ItoError> {
        if !(drift_rate > 0.0 && drift_rate.is_finite()) {
            return Err(ItoError::InvalidDriftRate(drift_rate));
        }
        let components = gmm
            .components()
            .iter()
            .map(|c| ItoComponent {
                drift_rate,
                drift_target: c.mean,
                diffusion: (2.0 * drift_rate * c.variance).sqrt(),
                weight: c.weight,
            })
            .collect();
        Ok(Self {
            components,
            initial_value: gmm.mean(),
        })
    }

    pub fn with_initial_value(mut self, value: f64) -> Self {
        self.initial_value = value;
        self
    }

    pub fn drift_rate(&self) -> f64 {
        self.components[0].drift_rate
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Squared diffusion `τ²(x) = 2 ∫_{−∞}^{x} m(z) p(z) dz / p(x)` that makes
/// `p` the stationary density of `dX = m(X) dt + τ(X) dW`.
pub fn diffusion_from_pdf<P, M>(density: P, drift: M, x: f64, tol: f64) -> Result<f64, ItoError>
where
    P: Fn(f64) -> f64,
    M: Fn(f64) -> f64,
{
    let px = density(x);
    if !(px >= 1e-300) {
        return Err(ItoError::VanishingDensity { x, density: px });
    }
    let opts = QuadOptions {
        abs_tol: tol * px,
        rel_tol: tol,
        max_intervals: 4000,
    };
    let integral: f64 = quad::integrate_lower_tail(|z| drift(z) * density(z), x, opts)?;
    Ok(2.0 * integral / px)
}
