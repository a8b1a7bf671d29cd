mod common;

use freqmix_core::analytic::SolveError;
use freqmix_core::quad::QuadOptions;
use freqmix_core::{
    covariance_by_eigen, covariance_by_quadrature, matrix_exponential, solve_covariance, solve_mean,
    solve_mixture, solve_moment, CovarianceMethod, EigenWork, GaussianComponent, GeneralizedItoProcess,
    Gmm, LinearSdeSystem, TimeGrid,
};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk_a() -> DMatrix<f64> {
    common::to_dmatrix(common::desk_system().state_matrix())
}

#[test]
fn expm_matches_taylor_on_desk_matrix() {
    let a = desk_a() * 0.5;
    let got = matrix_exponential(&a).unwrap();
    let want = common::plain_taylor_expm(&a, 30);
    assert!(common::frobenius(&(got - want)) < 1e-10);
}

#[test]
fn expm_matches_eigen_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let a = common::random_stable(&mut rng);
        let work = EigenWork::new(&a).unwrap();
        for t in [0.1, 1.0, 7.0] {
            let lam = DMatrix::from_diagonal(&DVector::from_iterator(
                3,
                work.eigenvalues.iter().map(|l| (l * t).exp()),
            ));
            let recon = (&work.eigenvectors * lam * &work.inverse).map(|z| z.re);
            let got = matrix_exponential(&(&a * t)).unwrap();
            let scale = common::frobenius(&recon).max(1e-300);
            assert!(common::frobenius(&(got - recon)) / scale < 1e-12 * work.condition.max(1.0) * 10.0);
        }
    }
}

#[test]
fn mean_initial_and_steady_state() {
    let sys = common::desk_system();
    for i in 0..sys.component_count() {
        assert_eq!(solve_mean(&sys, i, 0.0).unwrap(), *sys.initial_state());
        let a = sys.state_matrix();
        let ss = -a.lu().solve(sys.constant(i)).unwrap();
        let late = solve_mean(&sys, i, 100.0).unwrap();
        assert!((late - ss).amax() < 1e-8);
    }
}

#[test]
fn mean_matches_integrator() {
    let gmm = Gmm::new(vec![
        GaussianComponent::new(0.5, 0.1, 0.001).unwrap(),
        GaussianComponent::new(0.5, 0.3, 0.001).unwrap(),
    ])
    .unwrap();
    let sys = common::desk_system_for(&gmm);
    let times = [5.0];
    let a = common::to_dmatrix(sys.state_matrix());
    let reference = common::ode_mean(
        &a,
        &common::to_dvector(sys.constant(0)),
        &common::to_dvector(sys.initial_state()),
        &times,
    );
    let got = solve_mean(&sys, 0, 5.0).unwrap();
    assert!((common::to_dvector(&got) - &reference[0]).amax() < 1e-8);
}

#[test]
fn scalar_reduction_variance() {
    let a = DMatrix::from_element(1, 1, -1.0);
    let b = DVector::from_element(1, (2.0f64 * 0.04).sqrt());
    let work = EigenWork::new(&a).unwrap();
    let v = covariance_by_eigen(&work, &b, 1.0).unwrap()[(0, 0)];
    assert!((v - 0.04 * (1.0 - (-2.0f64).exp())).abs() < 1e-12);
    assert!((v - 0.034_587).abs() < 1e-6);
}

#[test]
fn covariance_zero_at_start() {
    let sys = common::desk_system();
    let (c, _) = solve_covariance(&sys, 0, 0.0).unwrap();
    assert_eq!(c, Matrix3::zeros());
}

#[test]
fn covariance_matches_integral_on_desk_system() {
    let sys = common::desk_system();
    let a = desk_a();
    let b = common::to_dvector(sys.diffusion(1));
    let (cov, method) = solve_covariance(&sys, 1, 5.0).unwrap();
    assert_eq!(method, CovarianceMethod::Eigen);
    let reference = common::covariance_integral(&a, &b, 5.0, 400);
    assert!(common::frobenius(&(common::to_dmatrix(&cov) - reference)) < 1e-8);
}

#[test]
fn covariance_matches_lyapunov_ode_on_random_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let a = common::random_stable(&mut rng);
        let b = common::random_vector(&mut rng);
        let work = EigenWork::new(&a).unwrap();
        let times = [0.5, 3.0, 8.0];
        let reference = common::lyapunov_ode(&a, &b, &times);
        for (t, r) in times.iter().zip(reference) {
            let c = covariance_by_eigen(&work, &b, *t).unwrap();
            assert!(common::frobenius(&(c - r)) < 1e-8, "t = {t}");
        }
    }
}

#[test]
fn quadrature_fallback_agrees_with_eigen_formula() {
    let a = desk_a();
    let b = DVector::from_vec(vec![0.0, 0.0, 0.05]);
    let work = EigenWork::new(&a).unwrap();
    let opts = QuadOptions {
        abs_tol: 1e-15,
        rel_tol: 1e-13,
        max_intervals: 4000,
    };
    for t in [0.3, 2.5, 10.0] {
        let e = covariance_by_eigen(&work, &b, t).unwrap();
        let q = covariance_by_quadrature(&a, &b, t, opts).unwrap();
        assert!(common::frobenius(&(e - q)) < 1e-10);
    }
}

#[test]
fn defective_matrix_falls_back_to_quadrature() {
    // Jordan block in the frequency part: not diagonalizable.
    let a = Matrix3::new(-0.5, 1.0, 0.0, 0.0, -0.5, 0.2, 0.0, 0.0, -1.0);
    let sys = LinearSdeSystem::new(
        a,
        vec![Vector3::new(0.0, 0.01, 0.2)],
        vec![Vector3::new(0.0, 0.0, 0.1)],
        Vector3::new(0.0, 0.0, 0.2),
        vec![1.0],
    )
    .unwrap();
    let m = solve_moment(&sys, 0, 4.0).unwrap();
    assert_eq!(m.method, CovarianceMethod::Quadrature);
    let reference = common::lyapunov_ode(
        &common::to_dmatrix(&a),
        &DVector::from_vec(vec![0.0, 0.0, 0.1]),
        &[4.0],
    );
    assert!(common::frobenius(&(common::to_dmatrix(&m.covariance) - &reference[0])) < 1e-10);
}

#[test]
fn single_component_mixture_reproduces_moments() {
    let gmm = Gmm::gaussian(0.25, 0.002).unwrap();
    let sys = common::desk_system_for(&gmm);
    let grid = TimeGrid::from_times(vec![0.5, 2.5, 5.0]).unwrap();
    let mix = solve_mixture(&sys, &grid).unwrap();
    for (k, &t) in grid.times().iter().enumerate() {
        let m = solve_moment(&sys, 0, t).unwrap();
        assert_eq!(mix.component_mean(k, 0), m.df_mean());
        assert_eq!(mix.component_variance(k, 0), m.df_variance());
        let s = mix.slice(t).unwrap();
        assert!((s.std_dev() - m.df_variance().sqrt()).abs() < 1e-15);
    }
}

#[test]
fn duplicated_component_matches_single_gaussian() {
    let single = common::desk_system_for(&Gmm::gaussian(0.25, 0.002).unwrap());
    let doubled = common::desk_system_for(
        &Gmm::new(vec![
            GaussianComponent::new(0.5, 0.25, 0.002).unwrap(),
            GaussianComponent::new(0.5, 0.25, 0.002).unwrap(),
        ])
        .unwrap(),
    );
    let grid = TimeGrid::from_times(vec![1.0, 5.0]).unwrap();
    let a = solve_mixture(&single, &grid).unwrap();
    let b = solve_mixture(&doubled, &grid).unwrap();
    for &t in grid.times() {
        let (sa, sb) = (a.slice(t).unwrap(), b.slice(t).unwrap());
        for k in -20..=20 {
            let x = sa.mean() + k as f64 * 0.2 * sa.std_dev();
            assert!((sa.pdf(x) - sb.pdf(x)).abs() <= 1e-12 * sa.pdf(x).max(1.0));
        }
    }
}

#[test]
fn weights_never_change() {
    let gmm = common::desk_gmm();
    let sys = common::desk_system_for(&gmm);
    let mix = solve_mixture(&sys, &TimeGrid::default()).unwrap();
    assert_eq!(mix.weights(), gmm.weights().as_slice());
    for k in 0..mix.times().len() {
        assert_eq!(mix.slice_at(k).weights, gmm.weights());
        for i in 0..mix.component_count() {
            assert!(mix.component_variance(k, i) >= 0.0);
        }
    }
}

#[test]
fn equal_component_spread_gives_equal_variance() {
    let gmm = Gmm::new(vec![
        GaussianComponent::new(0.2, 0.1, 0.001).unwrap(),
        GaussianComponent::new(0.3, 0.4, 0.001).unwrap(),
        GaussianComponent::new(0.5, 0.7, 0.001).unwrap(),
    ])
    .unwrap();
    let sys = common::desk_system_for(&gmm);
    let mix = solve_mixture(&sys, &TimeGrid::uniform(0.0, 10.0, 0.5).unwrap()).unwrap();
    for k in 0..mix.times().len() {
        let v0 = mix.component_variance(k, 0);
        for i in 1..3 {
            assert_eq!(mix.component_variance(k, i), v0);
        }
    }
}

#[test]
fn mixture_pdf_integrates_to_one() {
    let sys = common::desk_system();
    let grid = TimeGrid::uniform(0.5, 15.0, 0.5).unwrap();
    let mix = solve_mixture(&sys, &grid).unwrap();
    for &t in grid.times() {
        let s = mix.slice(t).unwrap();
        let (lo, hi) = (s.quantile(1e-9).unwrap(), s.quantile(1.0 - 1e-9).unwrap());
        let pad = 10.0 * s.std_dev();
        let total = common::gauss_legendre(|x| s.pdf(x), lo - pad, hi + pad, 2000);
        assert!((total - 1.0).abs() < 1e-6, "t = {t}: {total}");
    }
}

#[test]
fn quantile_inverts_cdf() {
    let sys = common::desk_system();
    let mix = solve_mixture(&sys, &TimeGrid::default()).unwrap();
    for t in [0.5, 5.0, 15.0] {
        for alpha in [0.01, 0.5, 0.99] {
            let q = mix.quantile(t, alpha).unwrap();
            assert!((mix.cdf(t, q).unwrap() - alpha).abs() < 1e-9);
        }
    }
    assert!(matches!(mix.quantile(0.025, 0.5), Err(SolveError::TimeNotOnGrid(_))));
    assert!(matches!(mix.quantile(5.0, 0.0), Err(SolveError::AlphaOutOfRange(_))));
}

#[test]
fn long_run_spread_settles() {
    let sys = common::desk_system();
    let a = sys.state_matrix_dyn();
    let slowest = a
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re.abs())
        .fold(f64::INFINITY, f64::min);
    let start = (10.0 / slowest / 5.0).ceil() * 5.0;
    let times: Vec<f64> = (0..6).map(|k| start + 5.0 * k as f64).collect();
    let mix = solve_mixture(&sys, &TimeGrid::from_times(times.clone()).unwrap()).unwrap();
    for w in times.windows(2) {
        let (s0, s1) = (mix.mix_std(w[0]).unwrap(), mix.mix_std(w[1]).unwrap());
        assert!((s1 - s0).abs() / s0 < 0.01, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn mean_trajectory_matches_integrator_for_every_component() {
    let sys = common::desk_system();
    let a = common::to_dmatrix(sys.state_matrix());
    let times: Vec<f64> = (1..=30).map(|k| k as f64 * 0.5).collect();
    for i in 0..sys.component_count() {
        let reference = common::ode_mean(
            &a,
            &common::to_dvector(sys.constant(i)),
            &common::to_dvector(sys.initial_state()),
            &times,
        );
        for (t, r) in times.iter().zip(&reference) {
            let got = solve_mean(&sys, i, *t).unwrap();
            assert!((common::to_dvector(&got) - r).amax() < 1e-8, "component {i}, t = {t}");
        }
    }
}

#[test]
fn solver_is_thread_count_independent() {
    let sys = common::desk_system();
    let grid = TimeGrid::default();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| solve_mixture(&sys, &grid).unwrap());
    let b = four.install(|| solve_mixture(&sys, &grid).unwrap());
    assert_eq!(a, b);
}

#[test]
fn process_initial_value_override_is_used() {
    let gmm = common::desk_gmm();
    let params = common::desk_params(&gmm);
    let agg = freqmix_core::aggregate(&params).unwrap();
    let process = GeneralizedItoProcess::from_gmm(&gmm, 1.0).unwrap().with_initial_value(0.0);
    let sys = freqmix_core::build_sde_system(&agg, &params, &process, None).unwrap();
    assert_eq!(solve_mean(&sys, 0, 0.0).unwrap()[2], 0.0);
}
