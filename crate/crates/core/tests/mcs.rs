mod common;

use freqmix_core::mcs::{empirical_cdf, McsError};
use freqmix_core::{simulate, solve_mean, LinearSdeSystem, McsConfig};
use nalgebra::{Matrix3, Vector3};

fn cfg(n_paths: usize, dt: f64, t_end: f64, seed: u64) -> McsConfig {
    McsConfig {
        n_paths,
        dt,
        t_end,
        master_seed: seed,
    }
}

#[test]
fn noise_free_paths_follow_the_mean() {
    let sys = common::desk_system();
    let quiet = sys.with_diffusions(vec![Vector3::zeros(); 3]).unwrap();
    let r = simulate(&quiet, &cfg(30, 1e-3, 5.0, 1), &[1.0, 5.0]).unwrap();
    for t in [1.0, 5.0] {
        let k = r.capture_index(t).unwrap();
        for (path, x) in r.states[k].iter().enumerate() {
            let exact = solve_mean(&quiet, r.components[path], t).unwrap();
            assert!((x - exact).amax() <= 1e-4, "t = {t}");
        }
    }
}

#[test]
fn scalar_ou_variance() {
    let sys = LinearSdeSystem::new(
        Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, -1.0)),
        vec![Vector3::new(0.0, 0.0, 0.3)],
        vec![Vector3::new(0.0, 0.0, 0.08f64.sqrt())],
        Vector3::new(0.0, 0.0, 0.3),
        vec![1.0],
    )
    .unwrap();
    let r = simulate(&sys, &cfg(20_000, 1e-3, 5.0, 4), &[5.0]).unwrap();
    let v = common::variance(&r.state_samples(5.0, 2).unwrap());
    assert!((v - 0.04).abs() / 0.04 < 0.05, "{v}");
}

#[test]
fn component_frequencies_match_weights() {
    let sys = common::desk_system();
    let n = 20_000;
    let r = simulate(&sys, &cfg(n, 0.01, 0.0, 9), &[0.0]).unwrap();
    let freq = r.component_frequencies(3);
    for (f, w) in freq.iter().zip(sys.weights()) {
        let sigma = (w * (1.0 - w) / n as f64).sqrt();
        assert!((f - w).abs() <= 3.0 * sigma, "{f} vs {w}");
    }
}

#[test]
fn identical_under_any_thread_count() {
    let sys = common::desk_system();
    let c = cfg(2_000, 1e-3, 2.0, 5);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate(&sys, &c, &[1.0, 2.0]).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.components, b.components);
    for (x, y) in a.states.iter().zip(&b.states) {
        assert!(x.iter().zip(y).all(|(p, q)| p == q));
    }
}

#[test]
fn halving_dt_moves_mean_less_than_standard_error() {
    let sys = common::desk_system();
    let n = 20_000;
    let coarse = simulate(&sys, &cfg(n, 2e-3, 5.0, 13), &[5.0]).unwrap();
    let fine = simulate(&sys, &cfg(n, 1e-3, 5.0, 13), &[5.0]).unwrap();
    let a = coarse.df_samples(5.0).unwrap();
    let b = fine.df_samples(5.0).unwrap();
    let se = (common::variance(&b) / n as f64).sqrt();
    assert!((common::mean(&a) - common::mean(&b)).abs() < se);
}

#[test]
fn empirical_cdf_properties() {
    let sys = common::desk_system();
    let n = 1_001;
    let r = simulate(&sys, &cfg(n, 1e-3, 1.0, 2), &[1.0]).unwrap();
    let mut x = r.df_samples(1.0).unwrap();
    x.sort_by(f64::total_cmp);
    assert_eq!(empirical_cdf(&r, 1.0, x[0] - 1.0).unwrap(), 0.0);
    assert_eq!(empirical_cdf(&r, 1.0, x[n - 1] + 1.0).unwrap(), 1.0);
    let median = x[n / 2];
    assert!((empirical_cdf(&r, 1.0, median).unwrap() - 0.5).abs() <= 1.0 / n as f64);
    assert!(matches!(
        empirical_cdf(&r, 0.5, 0.0),
        Err(McsError::UnknownCaptureTime(_))
    ));
}

#[test]
fn coarse_step_raises_warning() {
    let sys = common::desk_system();
    let r = simulate(&sys, &cfg(2, 0.5, 1.0, 0), &[1.0]).unwrap();
    assert_eq!(r.warnings.len(), 1);
    let r = simulate(&sys, &cfg(2, 1e-3, 1.0, 0), &[1.0]).unwrap();
    assert!(r.warnings.is_empty());
}

#[test]
fn divergence_is_reported() {
    // Stable but violently fast mode with a huge explicit step.
    let sys = LinearSdeSystem::new(
        Matrix3::from_diagonal(&Vector3::new(-1e4, -1.0, -1.0)),
        vec![Vector3::zeros()],
        vec![Vector3::zeros()],
        Vector3::new(1.0, 0.0, 0.0),
        vec![1.0],
    )
    .unwrap();
    let r = simulate(&sys, &cfg(1, 0.1, 100.0, 0), &[100.0]);
    assert!(matches!(r, Err(McsError::NonFiniteState { .. })));
}

#[test]
fn invalid_configs() {
    let sys = common::desk_system();
    assert!(matches!(simulate(&sys, &cfg(0, 1e-3, 1.0, 0), &[1.0]), Err(McsError::NoPaths)));
    assert!(matches!(simulate(&sys, &cfg(1, 0.0, 1.0, 0), &[1.0]), Err(McsError::InvalidStep(_))));
}
