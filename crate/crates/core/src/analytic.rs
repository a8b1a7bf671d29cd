//! Closed-form moments of the per-component linear SDEs and the resulting
//! frequency-deviation mixture.
//!
//! For `dX = (A·X + c) dt + B dW` with `X(0) = x₀`:
//!
//! ```text
//! E[X_t]   = e^{At} (x₀ + A⁻¹c) − A⁻¹c
//! Cov[X_t] = P · ((P⁻¹ B Bᵀ P⁻ᵀ) ∘ J(t)) · Pᵀ
//! J(k, j)  = (e^{(λ_k+λ_j)t} − 1) / (λ_k + λ_j)
//! ```
//!
//! where `A = P Λ P⁻¹`. The eigen-arithmetic is complex; the result is real
//! up to rounding. When `P` is badly conditioned the covariance integral is
//! evaluated by adaptive quadrature instead.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expm::{matrix_exponential, ExpmError};
use crate::normal;
use crate::quad::{self, QuadError, QuadOptions};
use crate::sfr::LinearSdeSystem;

/// Condition number of the eigenvector matrix above which the eigen formula
/// is abandoned.
pub const MAX_EIGEN_CONDITION: f64 = 1e8;
const IMAGINARY_TOL: f64 = 1e-9;
const RECONSTRUCTION_TOL: f64 = 1e-10;
const DEGENERATE_SUM: f64 = 1e-10;
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("state matrix is singular")]
    SingularA,
    #[error("state matrix has eigenvalue {re} {im:+}i with non-negative real part")]
    NotStable { re: f64, im: f64 },
    #[error("eigenvector matrix condition number {condition:e} exceeds {limit:e}")]
    IllConditionedEigenbasis { condition: f64, limit: f64 },
    #[error("eigendecomposition reconstructs A only to {residual:e}")]
    PoorReconstruction { residual: f64 },
    #[error("imaginary residue {residue:e} in a real moment")]
    ImaginaryResidue { residue: f64 },
    #[error("covariance quadrature failed: {0}")]
    NonConvergedFallback(QuadError),
    #[error(transparent)]
    Expm(#[from] ExpmError),
    #[error("time {0} is not on the solution grid")]
    TimeNotOnGrid(f64),
    #[error("proportion {0} is outside (0, 1)")]
    AlphaOutOfRange(f64),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("component {index} out of range (system has {count})")]
    ComponentOutOfRange { index: usize, count: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Sorted, non-negative evaluation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// `start, start + step, …` up to and including `end` (within rounding).
    pub fn uniform(start: f64, end: f64, step: f64) -> Result<Self, SolveError> {
        if !(start.is_finite() && end.is_finite() && step.is_finite()) {
            return Err(SolveError::InvalidGrid("non-finite bound".into()));
        }
        if !(step > 0.0) || end < start || start < 0.0 {
            return Err(SolveError::InvalidGrid(format!(
                "start {start}, end {end}, step {step}"
            )));
        }
        let count = ((end - start) / step + 1e-9).floor() as usize;
        let times = (0..=count).map(|k| start + k as f64 * step).collect();
        Ok(Self { times })
    }

    pub fn from_times(mut times: Vec<f64>) -> Result<Self, SolveError> {
        if times.is_empty() {
            return Err(SolveError::InvalidGrid("empty".into()));
        }
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(SolveError::InvalidGrid("times must be finite and non-negative".into()));
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&x| x < t - GRID_TOL);
        (i < self.times.len() && (self.times[i] - t).abs() <= GRID_TOL).then_some(i)
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self::uniform(0.0, 15.0, 0.05).expect("default grid is valid")
    }
}

/// Eigendecomposition `A = P Λ P⁻¹` of a stable real matrix.
#[derive(Debug, Clone)]
pub struct EigenWork {
    pub eigenvalues: Vec<Complex64>,
    pub eigenvectors: DMatrix<Complex64>,
    pub inverse: DMatrix<Complex64>,
    pub condition: f64,
}

fn to_complex(a: &DMatrix<f64>) -> DMatrix<Complex64> {
    a.map(|v| Complex64::new(v, 0.0))
}

fn singular_condition(m: &DMatrix<Complex64>) -> f64 {
    let s = m.clone().singular_values();
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

impl EigenWork {
    pub fn new(a: &DMatrix<f64>) -> Result<Self, SolveError> {
        let n = a.nrows();
        if n != a.ncols() || n == 0 {
            return Err(SolveError::DimensionMismatch(format!(
                "state matrix is {}x{}",
                n,
                a.ncols()
            )));
        }
        let eigenvalues: Vec<Complex64> = a.clone().complex_eigenvalues().iter().copied().collect();
        if let Some(l) = eigenvalues.iter().find(|l| !(l.re < 0.0)) {
            return Err(SolveError::NotStable { re: l.re, im: l.im });
        }
        let ac = to_complex(a);
        let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut p = DMatrix::<Complex64>::zeros(n, n);
        for k in 0..n {
            let lk = eigenvalues[k];
            let close = |l: &Complex64| (l - lk).norm() <= 1e-8 * scale;
            let cluster: Vec<usize> = (0..n).filter(|&j| close(&eigenvalues[j])).collect();
            let rank = cluster.iter().position(|&j| j == k).unwrap_or(0);
            let centre = cluster.iter().map(|&j| eigenvalues[j]).sum::<Complex64>()
                / cluster.len() as f64;
            let shifted = &ac - DMatrix::<Complex64>::identity(n, n) * centre;
            // Right singular vectors of the smallest singular values span the
            // (near-)null space of A − λI.
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t.expect("requested right singular vectors");
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
            let row = order[rank.min(n - 1)];
            let mut v: DVector<Complex64> = v_t.row(row).transpose().map(|z| z.conj());
            let norm = v.norm();
            v /= Complex64::new(norm, 0.0);
            p.set_column(k, &v);
        }
        let condition = singular_condition(&p);
        if !(condition <= MAX_EIGEN_CONDITION) {
            return Err(SolveError::IllConditionedEigenbasis {
                condition,
                limit: MAX_EIGEN_CONDITION,
            });
        }
        let inverse = p.clone().try_inverse().ok_or(SolveError::IllConditionedEigenbasis {
            condition: f64::INFINITY,
            limit: MAX_EIGEN_CONDITION,
        })?;
        let work = Self {
            eigenvalues,
            eigenvectors: p,
            inverse,
            condition,
        };
        let residual = (work.reconstruct() - ac).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        if residual > RECONSTRUCTION_TOL * scale {
            return Err(SolveError::PoorReconstruction { residual });
        }
        Ok(work)
    }

    /// `P Λ P⁻¹`.
    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(&self.eigenvalues));
        &self.eigenvectors * lambda * &self.inverse
    }

    /// Elementwise kernel `J(k, j)` at time `t`.
    pub fn kernel(&self, t: f64) -> DMatrix<Complex64> {
        let n = self.eigenvalues.len();
        DMatrix::from_fn(n, n, |k, j| {
            kernel_entry(self.eigenvalues[k] + self.eigenvalues[j], t)
        })
    }
}

/// `(e^{zt} − 1)/z`, with its limit `t` at `z → 0`.
fn kernel_entry(z: Complex64, t: f64) -> Complex64 {
    if z.norm() < DEGENERATE_SUM {
        return Complex64::new(t, 0.0);
    }
    let zt = z * t;
    if zt.norm() < 1e-4 {
        // t·(1 + zt/2 + (zt)²/6 + (zt)³/24)
        let series = Complex64::new(1.0, 0.0) + zt / 2.0 + zt * zt / 6.0 + zt * zt * zt / 24.0;
        return series * t;
    }
    (zt.exp() - 1.0) / z
}

fn real_part(m: DMatrix<Complex64>) -> Result<DMatrix<f64>, SolveError> {
    let scale = m.iter().fold(1.0f64, |s, z| s.max(z.re.abs()));
    let residue = m.iter().fold(0.0f64, |s, z| s.max(z.im.abs()));
    if residue > IMAGINARY_TOL * scale {
        return Err(SolveError::ImaginaryResidue { residue });
    }
    Ok(m.map(|z| z.re))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Covariance at `t` of `dX = A·X dt + b dW` started from a fixed point, by the
/// eigen formula.
pub fn covariance_by_eigen(
    work: &EigenWork,
    b: &DVector<f64>,
    t: f64,
) -> Result<DMatrix<f64>, SolveError> {
    let n = work.eigenvalues.len();
    if b.len() != n {
        return Err(SolveError::DimensionMismatch(format!(
            "diffusion has {} entries, state has {n}",
            b.len()
        )));
    }
    let projected = &work.inverse * b.map(|v| Complex64::new(v, 0.0));
    let outer = &projected * projected.transpose();
    let inner = outer.component_mul(&work.kernel(t));
    let cov = &work.eigenvectors * inner * work.eigenvectors.transpose();
    Ok(symmetrize(real_part(cov)?))
}

/// Same quantity as [`covariance_by_eigen`] from adaptive quadrature of
/// `∫₀ᵗ e^{As} b bᵀ e^{Aᵀs} ds`.
pub fn covariance_by_quadrature(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    t: f64,
    opts: QuadOptions,
) -> Result<DMatrix<f64>, SolveError> {
    let n = a.nrows();
    if t == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let integrand = |s: f64| -> DMatrix<f64> {
        match matrix_exponential(&(a * s)) {
            Ok(e) => {
                let g = e * b;
                &g * g.transpose()
            }
            Err(_) => DMatrix::from_element(n, n, f64::NAN),
        }
    };
    let cov = quad::integrate(integrand, 0.0, t, opts).map_err(SolveError::NonConvergedFallback)?;
    Ok(symmetrize(cov))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceMethod {
    Eigen,
    Quadrature,
}

/// Mean and covariance of one component's state at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoment {
    pub time: f64,
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    pub method: CovarianceMethod,
}

impl GaussianMoment {
    pub fn df_mean(&self) -> f64 {
        self.mean[1]
    }

    pub fn df_variance(&self) -> f64 {
        self.covariance[(1, 1)].max(0.0)
    }
}

/// Per-system precomputation shared by all components and times.
struct Solver<'a> {
    system: &'a LinearSdeSystem,
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    eigen: Option<EigenWork>,
}

impl<'a> Solver<'a> {
    fn new(system: &'a LinearSdeSystem) -> Result<Self, SolveError> {
        let a = system.state_matrix_dyn();
        let a_inv = a.clone().try_inverse().ok_or(SolveError::SingularA)?;
        let eigen = match EigenWork::new(&a) {
            Ok(w) => Some(w),
            Err(SolveError::IllConditionedEigenbasis { .. } | SolveError::PoorReconstruction { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            system,
            a,
            a_inv,
            eigen,
        })
    }

    fn check_component(&self, i: usize) -> Result<(), SolveError> {
        let count = self.system.component_count();
        if i >= count {
            return Err(SolveError::ComponentOutOfRange { index: i, count });
        }
        Ok(())
    }

    fn check_time(t: f64) -> Result<(), SolveError> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(SolveError::InvalidGrid(format!("time {t}")));
        }
        Ok(())
    }

    fn propagator(&self, t: f64) -> Result<DMatrix<f64>, SolveError> {
        Ok(matrix_exponential(&(&self.a * t))?)
    }

    fn mean_with(&self, e: &DMatrix<f64>, i: usize) -> Vector3<f64> {
        let c = dvec(self.system.constant(i));
        let x0 = dvec(self.system.initial_state());
        let shift = &self.a_inv * c;
        let m = e * (x0 + &shift) - shift;
        Vector3::new(m[0], m[1], m[2])
    }

    fn covariance(&self, i: usize, t: f64) -> Result<(Matrix3<f64>, CovarianceMethod), SolveError> {
        let b = dvec(self.system.diffusion(i));
        if t == 0.0 || b.iter().all(|&v| v == 0.0) {
            let method = if self.eigen.is_some() {
                CovarianceMethod::Eigen
            } else {
                CovarianceMethod::Quadrature
            };
            return Ok((Matrix3::zeros(), method));
        }
        let (cov, method) = match &self.eigen {
            Some(w) => (covariance_by_eigen(w, &b, t)?, CovarianceMethod::Eigen),
            None => (
                covariance_by_quadrature(&self.a, &b, t, fallback_options())?,
                CovarianceMethod::Quadrature,
            ),
        };
        Ok((Matrix3::from_iterator(cov.iter().copied()), method))
    }

    fn moment(&self, i: usize, t: f64) -> Result<GaussianMoment, SolveError> {
        self.check_component(i)?;
        Self::check_time(t)?;
        let e = self.propagator(t)?;
        let (covariance, method) = self.covariance(i, t)?;
        Ok(GaussianMoment {
            time: t,
            mean: self.mean_with(&e, i),
            covariance,
            method,
        })
    }
}

fn fallback_options() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-14,
        rel_tol: 1e-12,
        max_intervals: 4000,
    }
}

fn dvec(v: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

/// Mean of component `i`'s state at time `t`.
pub fn solve_mean(system: &LinearSdeSystem, i: usize, t: f64) -> Result<Vector3<f64>, SolveError> {
    let a = system.state_matrix_dyn();
    let a_inv = a.clone().try_inverse().ok_or(SolveError::SingularA)?;
    let solver = Solver {
        system,
        a,
        a_inv,
        eigen: None,
    };
    solver.check_component(i)?;
    Solver::check_time(t)?;
    let e = solver.propagator(t)?;
    Ok(solver.mean_with(&e, i))
}

/// Covariance of component `i`'s state at time `t`, with the method used.
pub fn solve_covariance(
    system: &LinearSdeSystem,
    i: usize,
    t: f64,
) -> Result<(Matrix3<f64>, CovarianceMethod), SolveError> {
    let solver = Solver::new(system)?;
    solver.check_component(i)?;
    Solver::check_time(t)?;
    solver.covariance(i, t)
}

pub fn solve_moment(system: &LinearSdeSystem, i: usize, t: f64) -> Result<GaussianMoment, SolveError> {
    Solver::new(system)?.moment(i, t)
}

/// Frequency-deviation mixture at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSlice {
    pub time: f64,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl MixtureSlice {
    pub fn pdf(&self, x: f64) -> f64 {
        self.terms().map(|(w, m, v)| w * normal::pdf(x, m, v)).sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let p: f64 = self.terms().map(|(w, m, v)| w * normal::cdf(x, m, v)).sum();
        p.clamp(0.0, 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.terms().map(|(w, m, _)| w * m).sum()
    }

    /// `Σω(σ² + μ²) − (Σωμ)²`.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let second: f64 = self.terms().map(|(w, m, v)| w * (v + m * m)).sum();
        (second - mean * mean).max(0.0)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Smallest `x` with `cdf(x) ≥ α`, by bisection.
    pub fn quantile(&self, alpha: f64) -> Result<f64, SolveError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(SolveError::AlphaOutOfRange(alpha));
        }
        let (mut lo, mut hi) = self.terms().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, m, v)| {
            let r = 40.0 * v.sqrt();
            (lo.min(m - r), hi.max(m + r))
        });
        // cdf(lo) < α ≤ cdf(hi)
        lo -= 1e-12 * lo.abs().max(1.0);
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) >= alpha {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    fn terms(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((&w, &m), &v)| (w, m, v))
    }
}

/// Weighted Gaussian components of Δf on a time grid. Weights do not
/// change with time.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMixture {
    grid: TimeGrid,
    weights: Vec<f64>,
    /// `[time][component]`
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    method: CovarianceMethod,
}

impl FrequencyMixture {
    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn component_count(&self) -> usize {
        self.weights.len()
    }

    pub fn method(&self) -> CovarianceMethod {
        self.method
    }

    pub fn component_mean(&self, time_index: usize, component: usize) -> f64 {
        self.means[time_index][component]
    }

    pub fn component_variance(&self, time_index: usize, component: usize) -> f64 {
        self.variances[time_index][component]
    }

    pub fn slice_at(&self, time_index: usize) -> MixtureSlice {
        MixtureSlice {
            time: self.grid.times()[time_index],
            weights: self.weights.clone(),
            means: self.means[time_index].clone(),
            variances: self.variances[time_index].clone(),
        }
    }

    pub fn slice(&self, t: f64) -> Result<MixtureSlice, SolveError> {
        let i = self.grid.index_of(t).ok_or(SolveError::TimeNotOnGrid(t))?;
        Ok(self.slice_at(i))
    }

    pub fn pdf(&self, t: f64, x: f64) -> Result<f64, SolveError> {
        Ok(self.slice(t)?.pdf(x))
    }

    pub fn cdf(&self, t: f64, x: f64) -> Result<f64, SolveError> {
        Ok(self.slice(t)?.cdf(x))
    }

    pub fn quantile(&self, t: f64, alpha: f64) -> Result<f64, SolveError> {
        self.slice(t)?.quantile(alpha)
    }

    pub fn mix_mean(&self, t: f64) -> Result<f64, SolveError> {
        Ok(self.slice(t)?.mean())
    }

    pub fn mix_std(&self, t: f64) -> Result<f64, SolveError> {
        Ok(self.slice(t)?.std_dev())
    }
}

/// Solves every component at every grid time and keeps the Δf marginals.
pub fn solve_mixture(system: &LinearSdeSystem, grid: &TimeGrid) -> Result<FrequencyMixture, SolveError> {
    let solver = Solver::new(system)?;
    let n = system.component_count();
    let rows: Vec<(Vec<f64>, Vec<f64>, CovarianceMethod)> = grid
        .times()
        .par_iter()
        .map(|&t| {
            let e = solver.propagator(t)?;
            let mut means = Vec::with_capacity(n);
            let mut vars = Vec::with_capacity(n);
            let mut method = CovarianceMethod::Eigen;
            for i in 0..n {
                means.push(solver.mean_with(&e, i)[1]);
                let (cov, m) = solver.covariance(i, t)?;
                vars.push(cov[(1, 1)].max(0.0));
                method = m;
            }
            Ok((means, vars, method))
        })
        .collect::<Result<_, SolveError>>()?;
    let method = rows.first().map(|r| r.2).unwrap_or(CovarianceMethod::Eigen);
    let (means, variances) = rows.into_iter().map(|(m, v, _)| (m, v)).unzip();
    Ok(FrequencyMixture {
        grid: grid.clone(),
        weights: system.weights().to_vec(),
        means,
        variances,
        method,
    })
}
