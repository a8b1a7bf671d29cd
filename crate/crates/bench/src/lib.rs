//! Shared fixtures for the benchmarks.

use freqmix_core::{
    aggregate, build_sde_system, GaussianComponent, GeneralizedItoProcess, Gmm, LinearSdeSystem,
    QuantileSeries, RawQuantileSeries, SfrParams,
};

/// Three-component wind mixture used across benches.
pub fn wind_mixture() -> Gmm {
    Gmm::new(vec![
        GaussianComponent::new(0.3, 0.10, 0.0009).unwrap(),
        GaussianComponent::new(0.45, 0.22, 0.0016).unwrap(),
        GaussianComponent::new(0.25, 0.38, 0.0025).unwrap(),
    ])
    .unwrap()
}

pub fn desk_system() -> LinearSdeSystem {
    let gmm = wind_mixture();
    let mut params = SfrParams::single_unit(0.7, 0.3, 0.0);
    params.load_power = gmm.mean();
    let agg = aggregate(&params).unwrap();
    let process = GeneralizedItoProcess::from_gmm(&gmm, 1.0).unwrap();
    build_sde_system(&agg, &params, &process, None).unwrap()
}

/// Draws from a quantile series built off [`wind_mixture`], the same route
/// a forecast file takes through the pipeline.
pub fn wind_samples(count: usize, seed: u64) -> Vec<f64> {
    let gmm = wind_mixture();
    let proportions: Vec<f64> = (1..20).map(|k| k as f64 * 0.05).collect();
    let values = proportions
        .iter()
        .map(|&p| {
            let (mut lo, mut hi) = (-1.0, 2.0);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if gmm.cdf(mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        })
        .collect();
    let raw = RawQuantileSeries {
        proportions,
        values,
        horizon_id: "bench".into(),
    };
    QuantileSeries::parse(&raw).unwrap().sample(count, seed).unwrap()
}
