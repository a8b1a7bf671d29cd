//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls the library's solvers: ODEs go through a
//! Dormand–Prince integrator, matrix exponentials through a Taylor series,
//! and integrals through composite Gauss–Legendre rules.

#![allow(dead_code)]

use freqmix_core::{
    aggregate, build_sde_system, GaussianComponent, GeneralizedItoProcess, Gmm, LinearSdeSystem,
    SfrParams,
};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

// ---------------------------------------------------------------- scenarios

/// Three-mode wind mixture used for the desk scenario.
pub fn desk_gmm() -> Gmm {
    Gmm::new(vec![
        GaussianComponent::new(0.3, 0.10, 0.0009).unwrap(),
        GaussianComponent::new(0.45, 0.22, 0.0016).unwrap(),
        GaussianComponent::new(0.25, 0.38, 0.0025).unwrap(),
    ])
    .unwrap()
}

/// Two well-separated wind modes.
pub fn bimodal_gmm() -> Gmm {
    Gmm::new(vec![
        GaussianComponent::new(0.5, 0.05, 0.0004).unwrap(),
        GaussianComponent::new(0.5, 0.45, 0.0004).unwrap(),
    ])
    .unwrap()
}

/// Published single-machine parameters with 30% VSG-controlled wind; the
/// load absorbs the mean wind in-feed so the long-run mean Δf is zero.
pub fn desk_params(gmm: &Gmm) -> SfrParams {
    let mut p = SfrParams::single_unit(0.7, 0.3, 0.0);
    p.load_power = gmm.mean();
    p
}

pub fn desk_system_for(gmm: &Gmm) -> LinearSdeSystem {
    let params = desk_params(gmm);
    let agg = aggregate(&params).unwrap();
    let process = GeneralizedItoProcess::from_gmm(gmm, 1.0).unwrap();
    build_sde_system(&agg, &params, &process, None).unwrap()
}

pub fn desk_system() -> LinearSdeSystem {
    desk_system_for(&desk_gmm())
}

/// Random matrix whose symmetric part is negative definite, hence stable.
pub fn random_stable(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
    let s = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
    let skew = (&s - s.transpose()) * 0.5;
    let spd = &m * m.transpose() + DMatrix::identity(3, 3) * 0.1;
    skew - spd
}

pub fn random_vector(rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0))
}

pub fn to_dmatrix(a: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(3, 3, a.iter().copied())
}

pub fn to_dvector(v: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

/// Draws from a Gaussian mixture.
pub fn sample_gmm(gmm: &Gmm, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals: Vec<Normal<f64>> = gmm
        .components()
        .iter()
        .map(|c| Normal::new(c.mean, c.variance.sqrt()).unwrap())
        .collect();
    (0..count)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = normals.len() - 1;
            for (i, c) in gmm.components().iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            normals[pick].sample(&mut rng)
        })
        .collect()
}

// ---------------------------------------------------------------- Dormand–Prince

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive RK5(4) solution of `x' = f(t, x)` reported at each of `times`
/// (sorted, ≥ t0).
pub fn dormand_prince<F>(f: F, x0: &[f64], t0: f64, times: &[f64], tol: f64) -> Vec<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut t = t0;
    let mut h = 1e-3;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        while t < target {
            let last = h >= target - t;
            let step = if last { target - t } else { h };
            let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
            for s in 0..7 {
                let mut xs = x.clone();
                for (j, kj) in k.iter().enumerate() {
                    for i in 0..n {
                        xs[i] += step * A[s][j] * kj[i];
                    }
                }
                k.push(f(t + C[s] * step, &xs));
            }
            let mut x5 = x.clone();
            let mut err: f64 = 0.0;
            for i in 0..n {
                let mut hi = 0.0;
                let mut lo = 0.0;
                for s in 0..7 {
                    hi += B5[s] * k[s][i];
                    lo += B4[s] * k[s][i];
                }
                x5[i] += step * hi;
                let scale = tol * (1.0 + x[i].abs().max(x5[i].abs()));
                err = err.max((step * (hi - lo)).abs() / scale);
            }
            if err <= 1.0 {
                t = if last { target } else { t + step };
                x = x5;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = step * factor;
        }
        out.push(x.clone());
    }
    out
}

/// Mean trajectory `x' = A x + c` by the adaptive integrator.
pub fn ode_mean(a: &DMatrix<f64>, c: &DVector<f64>, x0: &DVector<f64>, times: &[f64]) -> Vec<DVector<f64>> {
    let f = |_t: f64, x: &[f64]| -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        (a * xv + c).as_slice().to_vec()
    };
    dormand_prince(f, x0.as_slice(), 0.0, times, 1e-13)
        .into_iter()
        .map(DVector::from_vec)
        .collect()
}

/// Covariance from the Lyapunov ODE `P' = A P + P Aᵀ + b bᵀ`, `P(0) = 0`.
pub fn lyapunov_ode(a: &DMatrix<f64>, b: &DVector<f64>, times: &[f64]) -> Vec<DMatrix<f64>> {
    let n = a.nrows();
    let q = b * b.transpose();
    let f = |_t: f64, p: &[f64]| -> Vec<f64> {
        let pm = DMatrix::from_column_slice(n, n, p);
        let d = a * &pm + &pm * a.transpose() + &q;
        d.as_slice().to_vec()
    };
    dormand_prince(f, &vec![0.0; n * n], 0.0, times, 1e-13)
        .into_iter()
        .map(|v| DMatrix::from_vec(n, n, v))
        .collect()
}

// ---------------------------------------------------------------- Taylor exponential

/// `e^M` by a truncated Taylor series after scaling `M` below norm 1/2.
pub fn taylor_expm(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.iter().map(|v| v.abs()).sum::<f64>();
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.5 {
        s += 1;
    }
    let scaled = m / 2f64.powi(s);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..terms {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Plain truncated series with no scaling.
pub fn plain_taylor_expm(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..terms {
        term = &term * m / k as f64;
        sum += &term;
    }
    sum
}

// ---------------------------------------------------------------- Gauss–Legendre

const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

/// Composite 5-point Gauss–Legendre over `panels` equal panels.
pub fn gauss_legendre<F>(f: F, a: f64, b: f64, panels: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    total * 0.5 * h
}

/// `∫₀ᵗ e^{A(t−s)} b bᵀ e^{Aᵀ(t−s)} ds` by Gauss–Legendre with Taylor exponentials.
pub fn covariance_integral(a: &DMatrix<f64>, b: &DVector<f64>, t: f64, panels: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let h = t / panels as f64;
    let mut total = DMatrix::<f64>::zeros(n, n);
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let s = mid + 0.5 * h * x;
            let g = taylor_expm(&(a * (t - s)), 30) * b;
            total += &g * g.transpose() * w;
        }
    }
    total * (0.5 * h)
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------- statistics

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}
