//! Aggregated VSG-SFR model and the per-component linear SDE systems.
//!
//! State ordering is `(t_g, Δf, P_w)` throughout: governor state, per-unit
//! frequency deviation, wind power. The wind converter lag is taken as zero,
//! so VSG inertia and droop fold directly into the equivalent coefficients.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expm::{matrix_exponential, ExpmError};
use crate::ito::GeneralizedItoProcess;

const SHARE_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SfrError {
    #[error("invalid SFR parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("capacity shares sum to {0}, expected 1")]
    SharesDoNotSumToOne(f64),
    #[error("aggregation is degenerate: {0}")]
    DegenerateAggregation(String),
    #[error("state matrix is not stable: eigenvalue {re} {im:+}i")]
    UnstableSystem { re: f64, im: f64 },
    #[error("system definition is inconsistent: {0}")]
    InvalidSystem(String),
    #[error(transparent)]
    Expm(#[from] ExpmError),
}

/// Physical parameters of the single-machine VSG-SFR model (per-unit).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfrParams {
    /// Governor gain 1/R.
    pub governor_gain_inv: f64,
    /// Synchronous inertia H (s).
    pub inertia: f64,
    /// Turbine characteristic coefficient a.
    pub turbine_coeff: f64,
    /// Turbine time constant T (s).
    pub turbine_time: f64,
    /// Load damping D.
    pub damping: f64,
    /// VSG regulation coefficient δ_w.
    pub vsg_droop: f64,
    /// VSG virtual inertia H_w (s).
    pub vsg_inertia: f64,
    /// Synchronous capacity share K.
    pub sync_share: f64,
    /// Wind capacity share with VSG control K₁.
    pub vsg_share: f64,
    /// Wind capacity share without VSG control K₂.
    pub nonvsg_share: f64,
    pub gen_power: f64,
    pub load_power: f64,
    /// Reference frequency f₀ (Hz).
    pub ref_freq: f64,
    /// Replaces D in the aggregated damping when set.
    #[serde(default)]
    pub damping_override: Option<f64>,
}

impl SfrParams {
    /// Single thermal unit plus wind, with the published simplified-model values
    /// (1/R = 16.5, H = 4.96, a = 0.278, T = 10, D = 1.2, δ_w = 0.05, H_w = 2).
    pub fn single_unit(k: f64, k1: f64, k2: f64) -> Self {
        Self {
            governor_gain_inv: 16.5,
            inertia: 4.96,
            turbine_coeff: 0.278,
            turbine_time: 10.0,
            damping: 1.2,
            vsg_droop: 0.05,
            vsg_inertia: 2.0,
            sync_share: k,
            vsg_share: k1,
            nonvsg_share: k2,
            gen_power: 0.0,
            load_power: 0.0,
            ref_freq: 50.0,
            damping_override: None,
        }
    }

    /// Droop R.
    pub fn droop(&self) -> f64 {
        1.0 / self.governor_gain_inv
    }

    pub fn net_imbalance(&self) -> f64 {
        self.gen_power - self.load_power
    }

    pub fn validate(&self) -> Result<(), SfrError> {
        let check = |name, value: f64, ok: bool, reason| {
            if value.is_finite() && ok {
                Ok(())
            } else {
                Err(SfrError::InvalidParameter {
                    name,
                    value,
                    reason,
                })
            }
        };
        check("inv_R", self.governor_gain_inv, self.governor_gain_inv > 0.0, "must be positive")?;
        check("H", self.inertia, self.inertia >= 0.0, "must be non-negative")?;
        check("a", self.turbine_coeff, self.turbine_coeff >= 0.0, "must be non-negative")?;
        check("T", self.turbine_time, self.turbine_time > 0.0, "must be positive")?;
        check("D", self.damping, true, "must be finite")?;
        check("H_w", self.vsg_inertia, self.vsg_inertia >= 0.0, "must be non-negative")?;
        check("K", self.sync_share, self.sync_share >= 0.0, "must be non-negative")?;
        check("K1", self.vsg_share, self.vsg_share >= 0.0, "must be non-negative")?;
        check("K2", self.nonvsg_share, self.nonvsg_share >= 0.0, "must be non-negative")?;
        check("P_G", self.gen_power, true, "must be finite")?;
        check("P_L", self.load_power, true, "must be finite")?;
        check("f0", self.ref_freq, self.ref_freq > 0.0, "must be positive")?;
        if self.vsg_share > 0.0 {
            check("delta_w", self.vsg_droop, self.vsg_droop > 0.0, "must be positive when K1 > 0")?;
        }
        if let Some(d) = self.damping_override {
            check("D_s", d, true, "must be finite")?;
        }
        let total = self.sync_share + self.vsg_share + self.nonvsg_share;
        if (total - 1.0).abs() > SHARE_SUM_TOL {
            return Err(SfrError::SharesDoNotSumToOne(total));
        }
        Ok(())
    }
}

/// Equivalent single-machine coefficients H_s, a_s, R_s, D_s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatedSfr {
    pub h_s: f64,
    pub a_s: f64,
    pub r_s: f64,
    pub d_s: f64,
}

/// Folds VSG inertia and droop into the equivalent coefficients:
///
/// ```text
/// H_s = K·H + K₁·H_w
/// a_s = (K·a + R·K₁/δ_w) / (K + R·K₁/δ_w)
/// R_s = K·R / (K + R·K₁/δ_w)
/// ```
pub fn aggregate(params: &SfrParams) -> Result<AggregatedSfr, SfrError> {
    params.validate()?;
    let k = params.sync_share;
    let k1 = params.vsg_share;
    let r = params.droop();
    let vsg_term = if k1 > 0.0 { r * k1 / params.vsg_droop } else { 0.0 };
    let denom = k + vsg_term;
    if !(denom > 0.0) {
        return Err(SfrError::DegenerateAggregation(format!(
            "K + R·K1/δ_w = {denom} is not positive"
        )));
    }
    let h_s = k * params.inertia + k1 * params.vsg_inertia;
    let a_s = (k * params.turbine_coeff + vsg_term) / denom;
    let r_s = k * r / denom;
    if !(h_s > 0.0) {
        return Err(SfrError::DegenerateAggregation(format!("H_s = {h_s} is not positive")));
    }
    if !(r_s > 0.0) {
        return Err(SfrError::DegenerateAggregation(format!(
            "R_s = {r_s} is not positive (no synchronous share)"
        )));
    }
    Ok(AggregatedSfr {
        h_s,
        a_s,
        r_s,
        d_s: params.damping_override.unwrap_or(params.damping),
    })
}

impl AggregatedSfr {
    /// Deterministic 2×2 block over `(t_g, Δf)`.
    pub fn frequency_block(&self, sync_share: f64, turbine_time: f64) -> Matrix2<f64> {
        let two_h = 2.0 * self.h_s;
        Matrix2::new(
            -1.0 / turbine_time,
            (1.0 - self.a_s) / (self.r_s * turbine_time),
            -sync_share / two_h,
            -(self.d_s + sync_share * self.a_s / self.r_s) / two_h,
        )
    }

    /// Initial rate of change of frequency after a step `disturbance`.
    pub fn initial_rocof(&self, disturbance: f64) -> f64 {
        disturbance / (2.0 * self.h_s)
    }
}

/// One linear SDE `dX = (A·X + c_i) dt + B_i dW` per Itô component, all
/// sharing `A` and the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSdeSystem {
    state_matrix: Matrix3<f64>,
    constants: Vec<Vector3<f64>>,
    diffusions: Vec<Vector3<f64>>,
    initial_state: Vector3<f64>,
    weights: Vec<f64>,
}

fn unstable_eigenvalue(a: &DMatrix<f64>) -> Option<Complex64> {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .copied()
        .filter(|l| !(l.re < 0.0))
        .max_by(|x, y| x.re.total_cmp(&y.re))
}

impl LinearSdeSystem {
    pub fn new(
        state_matrix: Matrix3<f64>,
        constants: Vec<Vector3<f64>>,
        diffusions: Vec<Vector3<f64>>,
        initial_state: Vector3<f64>,
        weights: Vec<f64>,
    ) -> Result<Self, SfrError> {
        let n = weights.len();
        if n == 0 || constants.len() != n || diffusions.len() != n {
            return Err(SfrError::InvalidSystem(format!(
                "{} weights, {} constant vectors, {} diffusion vectors",
                n,
                constants.len(),
                diffusions.len()
            )));
        }
        let finite = state_matrix.iter().all(|v| v.is_finite())
            && initial_state.iter().all(|v| v.is_finite())
            && constants.iter().flatten().all(|v| v.is_finite())
            && diffusions.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(SfrError::InvalidSystem("non-finite entry".into()));
        }
        if diffusions.iter().any(|b| b[0] != 0.0 || b[1] != 0.0) {
            return Err(SfrError::InvalidSystem(
                "noise may only enter through the wind-power state".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w > 0.0 && w <= 1.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(SfrError::InvalidSystem(format!("weights sum to {total}")));
        }
        let dyn_a = DMatrix::from_iterator(3, 3, state_matrix.iter().copied());
        if let Some(l) = unstable_eigenvalue(&dyn_a) {
            return Err(SfrError::UnstableSystem { re: l.re, im: l.im });
        }
        Ok(Self {
            state_matrix,
            constants,
            diffusions,
            initial_state,
            weights,
        })
    }

    pub fn state_matrix(&self) -> &Matrix3<f64> {
        &self.state_matrix
    }

    pub fn constant(&self, i: usize) -> &Vector3<f64> {
        &self.constants[i]
    }

    pub fn diffusion(&self, i: usize) -> &Vector3<f64> {
        &self.diffusions[i]
    }

    pub fn constants(&self) -> &[Vector3<f64>] {
        &self.constants
    }

    pub fn diffusions(&self) -> &[Vector3<f64>] {
        &self.diffusions
    }

    pub fn initial_state(&self) -> &Vector3<f64> {
        &self.initial_state
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn component_count(&self) -> usize {
        self.weights.len()
    }

    /// Same dynamics, different diffusion vectors (e.g. to switch noise off).
    pub fn with_diffusions(&self, diffusions: Vec<Vector3<f64>>) -> Result<Self, SfrError> {
        Self::new(
            self.state_matrix,
            self.constants.clone(),
            diffusions,
            self.initial_state,
            self.weights.clone(),
        )
    }

    pub fn state_matrix_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(3, 3, self.state_matrix.iter().copied())
    }
}

/// Builds the per-component systems from the aggregated model and the
/// Itô decomposition of wind power.
pub fn build_sde_system(
    agg: &AggregatedSfr,
    params: &SfrParams,
    process: &GeneralizedItoProcess,
    x0_override: Option<Vector3<f64>>,
) -> Result<LinearSdeSystem, SfrError> {
    params.validate()?;
    if process.is_empty() {
        return Err(SfrError::InvalidSystem("no Itô components".into()));
    }
    let lambda = process.drift_rate();
    let block = agg.frequency_block(params.sync_share, params.turbine_time);
    let two_h = 2.0 * agg.h_s;
    let a = Matrix3::new(
        block[(0, 0)],
        block[(0, 1)],
        0.0,
        block[(1, 0)],
        block[(1, 1)],
        1.0 / two_h,
        0.0,
        0.0,
        -lambda,
    );
    let forcing = params.net_imbalance() / two_h;
    let constants = process
        .components
        .iter()
        .map(|c| Vector3::new(0.0, forcing, c.drift_constant()))
        .collect();
    let diffusions = process
        .components
        .iter()
        .map(|c| Vector3::new(0.0, 0.0, c.diffusion))
        .collect();
    let x0 = x0_override.unwrap_or_else(|| Vector3::new(0.0, 0.0, process.initial_value));
    LinearSdeSystem::new(a, constants, diffusions, x0, process.weights())
}

/// Deterministic frequency trajectory after a power step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResponse {
    pub times: Vec<f64>,
    pub governor: Vec<f64>,
    pub df: Vec<f64>,
    /// Δf of largest magnitude on the grid (signed).
    pub nadir: f64,
    pub nadir_time: f64,
    pub steady_state: f64,
    pub initial_rocof: f64,
}

/// Exact response of the 2×2 frequency block to a constant `disturbance`
/// starting from rest.
pub fn step_response(
    agg: &AggregatedSfr,
    params: &SfrParams,
    disturbance: f64,
    t_grid: &[f64],
) -> Result<StepResponse, SfrError> {
    let a = agg.frequency_block(params.sync_share, params.turbine_time);
    let dyn_a = DMatrix::from_iterator(2, 2, a.iter().copied());
    if let Some(l) = unstable_eigenvalue(&dyn_a) {
        return Err(SfrError::UnstableSystem { re: l.re, im: l.im });
    }
    let forcing = Vector2::new(0.0, disturbance / (2.0 * agg.h_s));
    let a_inv = a.try_inverse().ok_or_else(|| {
        SfrError::DegenerateAggregation("frequency block is singular".into())
    })?;
    let shift = a_inv * forcing;
    let steady = -shift;
    let mut governor = Vec::with_capacity(t_grid.len());
    let mut df = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let e = matrix_exponential(&(&dyn_a * t))?;
        let e = Matrix2::from_iterator(e.iter().copied());
        let x = e * shift - shift;
        governor.push(x[0]);
        df.push(x[1]);
    }
    let (idx, nadir) = df
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
        .unwrap_or((0, 0.0));
    Ok(StepResponse {
        times: t_grid.to_vec(),
        governor,
        df,
        nadir,
        nadir_time: t_grid.get(idx).copied().unwrap_or(0.0),
        steady_state: steady[1],
        initial_rocof: agg.initial_rocof(disturbance),
    })
}
