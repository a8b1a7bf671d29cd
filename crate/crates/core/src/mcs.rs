//! Monte Carlo reference for the mixture SDE.
//!
//! Each path picks one component with probability equal to its weight, then
//! integrates `dX = (A·X + c_i) dt + B_i dW` by Euler–Maruyama from `x₀`.
//! Path `k` draws from its own ChaCha8 stream `(master_seed, k)`, so the
//! result does not depend on how paths are scheduled across threads.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sfr::LinearSdeSystem;

const ALIGN_TOL: f64 = 1e-9;
const GUARD_INTERVAL: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McsError {
    #[error("n_paths must be at least 1")]
    NoPaths,
    #[error("invalid step size {0}")]
    InvalidStep(f64),
    #[error("invalid end time {0}")]
    InvalidEndTime(f64),
    #[error("capture time {time} is not a multiple of dt = {dt} within [0, t_end]")]
    MisalignedCaptureTime { time: f64, dt: f64 },
    #[error("path {path} diverged at t = {time}")]
    NonFiniteState { path: usize, time: f64 },
    #[error("time {0} was not captured")]
    UnknownCaptureTime(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub t_end: f64,
    pub master_seed: u64,
}

impl Default for McsConfig {
    fn default() -> Self {
        Self {
            n_paths: 20_000,
            dt: 0.001,
            t_end: 15.0,
            master_seed: 0,
        }
    }
}

impl McsConfig {
    fn validate(&self) -> Result<usize, McsError> {
        if self.n_paths == 0 {
            return Err(McsError::NoPaths);
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(McsError::InvalidStep(self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(McsError::InvalidEndTime(self.t_end));
        }
        let steps = step_index(self.t_end, self.dt)
            .ok_or(McsError::MisalignedCaptureTime {
                time: self.t_end,
                dt: self.dt,
            })?;
        Ok(steps)
    }

    /// A message when `dt` exceeds 1% of the fastest time constant of `A`.
    pub fn step_warning(&self, system: &LinearSdeSystem) -> Option<String> {
        let fastest = system
            .state_matrix_dyn()
            .complex_eigenvalues()
            .iter()
            .map(|l| l.re.abs())
            .fold(0.0, f64::max);
        if fastest == 0.0 {
            return None;
        }
        let tau = 1.0 / fastest;
        (self.dt > 0.01 * tau).then(|| {
            format!(
                "dt = {} exceeds 1% of the fastest time constant {:.4} s",
                self.dt, tau
            )
        })
    }
}

fn step_index(t: f64, dt: f64) -> Option<usize> {
    let k = (t / dt).round();
    ((t / dt - k).abs() <= ALIGN_TOL * k.max(1.0) && k >= 0.0).then_some(k as usize)
}

/// Captured states, indexed `[capture][path]`.
#[derive(Debug, Clone, PartialEq)]
pub struct McsResult {
    pub capture_times: Vec<f64>,
    pub states: Vec<Vec<Vector3<f64>>>,
    /// Component drawn by each path.
    pub components: Vec<usize>,
    pub config: McsConfig,
    pub warnings: Vec<String>,
}

impl McsResult {
    pub fn n_paths(&self) -> usize {
        self.components.len()
    }

    pub fn capture_index(&self, t: f64) -> Result<usize, McsError> {
        self.capture_times
            .iter()
            .position(|&c| (c - t).abs() <= ALIGN_TOL * t.abs().max(1.0))
            .ok_or(McsError::UnknownCaptureTime(t))
    }

    /// Values of state `index` (0 governor, 1 Δf, 2 wind) across paths.
    pub fn state_samples(&self, t: f64, index: usize) -> Result<Vec<f64>, McsError> {
        let k = self.capture_index(t)?;
        Ok(self.states[k].iter().map(|x| x[index]).collect())
    }

    pub fn df_samples(&self, t: f64) -> Result<Vec<f64>, McsError> {
        self.state_samples(t, 1)
    }

    /// Fraction of paths assigned to each of `count` components.
    pub fn component_frequencies(&self, count: usize) -> Vec<f64> {
        let mut hits = vec![0usize; count];
        for &c in &self.components {
            if c < count {
                hits[c] += 1;
            }
        }
        hits.iter()
            .map(|&h| h as f64 / self.components.len() as f64)
            .collect()
    }

    pub fn empirical_cdf(&self, t: f64, x: f64) -> Result<f64, McsError> {
        empirical_cdf(self, t, x)
    }
}

/// Right-continuous empirical CDF of Δf at capture time `t`.
pub fn empirical_cdf(result: &McsResult, t: f64, x: f64) -> Result<f64, McsError> {
    let k = result.capture_index(t)?;
    let paths = &result.states[k];
    let below = paths.iter().filter(|s| s[1] <= x).count();
    Ok(below as f64 / paths.len() as f64)
}

fn pick_component(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

pub fn simulate(
    system: &LinearSdeSystem,
    cfg: &McsConfig,
    capture_times: &[f64],
) -> Result<McsResult, McsError> {
    let total_steps = cfg.validate()?;
    let mut captures: Vec<(usize, f64)> = Vec::with_capacity(capture_times.len());
    for &t in capture_times {
        let k = step_index(t, cfg.dt)
            .filter(|&k| k <= total_steps && t >= 0.0)
            .ok_or(McsError::MisalignedCaptureTime { time: t, dt: cfg.dt })?;
        captures.push((k, t));
    }
    let last_step = captures.iter().map(|c| c.0).max().unwrap_or(0);

    let a = *system.state_matrix();
    let weights = system.weights();
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();

    let paths: Vec<(usize, Vec<Vector3<f64>>)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
            rng.set_stream(path as u64);
            let comp = pick_component(weights, rng.random::<f64>());
            let c = system.constant(comp);
            let b = system.diffusion(comp) * sqrt_dt;
            let mut x = *system.initial_state();
            let mut out = vec![Vector3::zeros(); captures.len()];
            for (slot, &(k, _)) in out.iter_mut().zip(&captures) {
                if k == 0 {
                    *slot = x;
                }
            }
            for step in 1..=last_step {
                let z: f64 = rng.sample(StandardNormal);
                x += (a * x + c) * dt + b * z;
                if step % GUARD_INTERVAL == 0 && !x.iter().all(|v| v.is_finite()) {
                    return Err(McsError::NonFiniteState {
                        path,
                        time: step as f64 * dt,
                    });
                }
                for (slot, &(k, _)) in out.iter_mut().zip(&captures) {
                    if k == step {
                        *slot = x;
                    }
                }
            }
            if !out.iter().flatten().all(|v| v.is_finite()) {
                return Err(McsError::NonFiniteState {
                    path,
                    time: last_step as f64 * dt,
                });
            }
            Ok((comp, out))
        })
        .collect::<Result<_, McsError>>()?;

    let mut states = vec![Vec::with_capacity(cfg.n_paths); captures.len()];
    let mut components = Vec::with_capacity(cfg.n_paths);
    for (comp, out) in paths {
        components.push(comp);
        for (slot, x) in states.iter_mut().zip(out) {
            slot.push(x);
        }
    }
    Ok(McsResult {
        capture_times: captures.iter().map(|c| c.1).collect(),
        states,
        components,
        config: *cfg,
        warnings: cfg.step_warning(system).into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn scalar_system() -> LinearSdeSystem {
        LinearSdeSystem::new(
            Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, -1.0)),
            vec![Vector3::new(0.0, 0.0, 0.5)],
            vec![Vector3::new(0.0, 0.0, 0.08f64.sqrt())],
            Vector3::new(0.0, 0.0, 0.5),
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn rejects_misaligned_capture() {
        let cfg = McsConfig {
            n_paths: 4,
            dt: 0.01,
            t_end: 1.0,
            master_seed: 1,
        };
        assert!(matches!(
            simulate(&scalar_system(), &cfg, &[0.005]),
            Err(McsError::MisalignedCaptureTime { .. })
        ));
        assert!(matches!(
            simulate(&scalar_system(), &cfg, &[2.0]),
            Err(McsError::MisalignedCaptureTime { .. })
        ));
    }

    #[test]
    fn capture_at_zero_is_initial_state() {
        let cfg = McsConfig {
            n_paths: 8,
            dt: 0.01,
            t_end: 0.1,
            master_seed: 3,
        };
        let r = simulate(&scalar_system(), &cfg, &[0.0, 0.1]).unwrap();
        assert!(r.state_samples(0.0, 2).unwrap().iter().all(|&x| x == 0.5));
        assert!(matches!(r.df_samples(0.05), Err(McsError::UnknownCaptureTime(_))));
    }

    #[test]
    fn empirical_cdf_tails() {
        let cfg = McsConfig {
            n_paths: 101,
            dt: 0.01,
            t_end: 1.0,
            master_seed: 9,
        };
        let r = simulate(&scalar_system(), &cfg, &[1.0]).unwrap();
        // uncoupled diagonal system: Δf stays at 0 on every path
        assert_eq!(r.empirical_cdf(1.0, -1.0).unwrap(), 0.0);
        assert_eq!(r.empirical_cdf(1.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn picks_by_cumulative_weight() {
        let w = [0.2, 0.5, 0.3];
        assert_eq!(pick_component(&w, 0.0), 0);
        assert_eq!(pick_component(&w, 0.2), 1);
        assert_eq!(pick_component(&w, 0.69), 1);
        assert_eq!(pick_component(&w, 0.999_999), 2);
    }
}
