//! One-dimensional Gaussian mixture models fitted by EM.
//!
//! The EM iteration starts from a k-means partition of the samples: each
//! class contributes its mean, variance and share `M_i / M` as the initial
//! component. E-steps run in the log domain so that far-out samples do not
//! underflow every responsibility to zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normal;

/// Lower bound on component variances (per-unit²).
pub const VARIANCE_FLOOR: f64 = 1e-10;
const WEIGHT_SUM_TOL: f64 = 1e-12;
const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("need at least {needed} samples for {needed} components, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("component count must be at least 1")]
    NoComponents,
    #[error("sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("k-means left cluster {cluster} empty and no point could be reassigned")]
    EmptyClusterUnrecoverable { cluster: usize },
    #[error("component variance collapsed {resets} times (limit {limit})")]
    DegenerateComponent { resets: usize, limit: usize },
    #[error("invalid component: weight {weight}, mean {mean}, variance {variance}")]
    InvalidComponent {
        weight: f64,
        mean: f64,
        variance: f64,
    },
    #[error("mixture weights sum to {0}, expected 1")]
    WeightsDoNotSumToOne(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: f64, variance: f64) -> Result<Self, GmmError> {
        let ok = weight > 0.0
            && weight <= 1.0
            && mean.is_finite()
            && variance.is_finite()
            && variance >= VARIANCE_FLOOR;
        if !ok {
            return Err(GmmError::InvalidComponent {
                weight,
                mean,
                variance,
            });
        }
        Ok(Self {
            weight,
            mean,
            variance,
        })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmRecord", into = "GmmRecord")]
pub struct Gmm {
    components: Vec<GaussianComponent>,
}

/// Serialized form: `{"components": [{"weight", "mean", "variance"}, ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GmmRecord {
    components: Vec<GaussianComponent>,
}

impl TryFrom<GmmRecord> for Gmm {
    type Error = GmmError;
    fn try_from(r: GmmRecord) -> Result<Self, GmmError> {
        Gmm::new(r.components)
    }
}

impl From<Gmm> for GmmRecord {
    fn from(g: Gmm) -> Self {
        GmmRecord {
            components: g.components,
        }
    }
}

impl Gmm {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self, GmmError> {
        if components.is_empty() {
            return Err(GmmError::NoComponents);
        }
        for c in &components {
            GaussianComponent::new(c.weight, c.mean, c.variance)?;
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(GmmError::WeightsDoNotSumToOne(total));
        }
        Ok(Self { components })
    }

    /// Single-component model.
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self, GmmError> {
        Self::new(vec![GaussianComponent::new(1.0, mean, variance)?])
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.variance + c.mean * c.mean))
            .sum::<f64>()
            - m * m
    }

    /// Moment-matched single Gaussian.
    pub fn collapse(&self) -> Gmm {
        Gmm {
            components: vec![GaussianComponent {
                weight: 1.0,
                mean: self.mean(),
                variance: self.variance().max(VARIANCE_FLOOR),
            }],
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * normal::pdf(x, c.mean, c.variance))
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let p: f64 = self
            .components
            .iter()
            .map(|c| c.weight * normal::cdf(x, c.mean, c.variance))
            .sum();
        p.clamp(0.0, 1.0)
    }

    /// Mean log-density of `samples`, summed.
    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.len()];
        samples
            .iter()
            .map(|&x| log_sum_exp_terms(&self.components, x, &mut scratch))
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mixture serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn log_sum_exp_terms(components: &[GaussianComponent], x: f64, terms: &mut [f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (t, c) in terms.iter_mut().zip(components) {
        *t = c.weight.ln() + normal::ln_pdf(x, c.mean, c.variance);
        max = max.max(*t);
    }
    let s: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + s.ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSummary {
    pub size: usize,
    pub mean: f64,
    pub variance: f64,
    pub weight: f64,
}

/// k-means partition Ω_N of the samples; classes ordered by ascending centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub classes: Vec<ClassSummary>,
    pub iterations: usize,
}

fn check_samples(samples: &[f64], n: usize) -> Result<(), GmmError> {
    if n == 0 {
        return Err(GmmError::NoComponents);
    }
    if samples.len() < n {
        return Err(GmmError::TooFewSamples {
            needed: n,
            got: samples.len(),
        });
    }
    if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
        return Err(GmmError::NonFiniteSample { index });
    }
    Ok(())
}

fn nearest(centroids: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in centroids.iter().enumerate() {
        let d = (x - c).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// An emptied cluster takes the point of the largest cluster that lies
/// farthest from that cluster's centroid.
pub fn kmeans_partition(samples: &[f64], n: usize, seed: u64) -> Result<Partition, GmmError> {
    check_samples(samples, n)?;
    let m = samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = Vec::with_capacity(n);
    centroids.push(samples[rng.random_range(0..m)]);
    let mut d2: Vec<f64> = samples.iter().map(|&x| (x - centroids[0]).powi(2)).collect();
    while centroids.len() < n {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = m - 1;
            for (j, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = j;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..m)
        };
        let c = samples[pick];
        centroids.push(c);
        for (dj, &x) in d2.iter_mut().zip(samples) {
            *dj = dj.min((x - c).powi(2));
        }
    }

    let mut labels = vec![usize::MAX; m];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut changed = false;
        for (l, &x) in labels.iter_mut().zip(samples) {
            let k = nearest(&centroids, x);
            if *l != k {
                *l = k;
                changed = true;
            }
        }
        repair_empty_clusters(samples, &mut labels, &mut centroids)?;
        let mut sums = vec![0.0; n];
        let mut counts = vec![0usize; n];
        for (&l, &x) in labels.iter().zip(samples) {
            sums[l] += x;
            counts[l] += 1;
        }
        for k in 0..n {
            centroids[k] = sums[k] / counts[k] as f64;
        }
        if !changed || iterations >= KMEANS_MAX_ITER {
            break;
        }
    }

    // Relabel by ascending centroid so the output order is canonical.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]).then(a.cmp(&b)));
    let mut rank = vec![0; n];
    for (r, &k) in order.iter().enumerate() {
        rank[k] = r;
    }
    for l in labels.iter_mut() {
        *l = rank[*l];
    }

    let mut classes = vec![
        ClassSummary {
            size: 0,
            mean: 0.0,
            variance: 0.0,
            weight: 0.0,
        };
        n
    ];
    for (&l, &x) in labels.iter().zip(samples) {
        classes[l].size += 1;
        classes[l].mean += x;
    }
    for c in classes.iter_mut() {
        c.mean /= c.size as f64;
        c.weight = c.size as f64 / m as f64;
    }
    for (&l, &x) in labels.iter().zip(samples) {
        classes[l].variance += (x - classes[l].mean).powi(2);
    }
    for c in classes.iter_mut() {
        c.variance /= c.size as f64;
    }
    Ok(Partition {
        labels,
        classes,
        iterations,
    })
}

fn repair_empty_clusters(
    samples: &[f64],
    labels: &mut [usize],
    centroids: &mut [f64],
) -> Result<(), GmmError> {
    let n = centroids.len();
    loop {
        let mut counts = vec![0usize; n];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return Ok(());
        };
        let largest = (0..n)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("n >= 1");
        if counts[largest] < 2 {
            return Err(GmmError::EmptyClusterUnrecoverable { cluster: empty });
        }
        let centre = centroids[largest];
        let far = labels
            .iter()
            .zip(samples)
            .enumerate()
            .filter(|(_, (&l, _))| l == largest)
            .max_by(|a, b| {
                let da = (a.1 .1 - centre).abs();
                let db = (b.1 .1 - centre).abs();
                da.total_cmp(&db).then(b.0.cmp(&a.0))
            })
            .map(|(j, _)| j)
            .expect("largest cluster is non-empty");
        labels[far] = empty;
        centroids[empty] = samples[far];
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub components: usize,
    /// Absolute tolerance on the change in total log-likelihood.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub variance_floor: f64,
    /// How many variance-floor resets are tolerated before giving up.
    pub max_floor_resets: usize,
    pub keep_responsibilities: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            components: 10,
            tol: 1e-8,
            max_iter: 500,
            seed: 0,
            variance_floor: VARIANCE_FLOOR,
            max_floor_resets: 50,
            keep_responsibilities: false,
        }
    }
}

impl EmConfig {
    pub fn with_components(components: usize) -> Self {
        Self {
            components,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmReport {
    /// Number of M-steps performed.
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub converged: bool,
    /// Log-likelihood evaluated before every M-step, then at the returned parameters.
    pub log_likelihood_trace: Vec<f64>,
    pub floor_resets: usize,
    /// γ_ij at the returned parameters, one row per sample.
    pub responsibility_snapshot: Option<Vec<Vec<f64>>>,
}

struct Params {
    weight: Vec<f64>,
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl Params {
    fn as_components(&self) -> Vec<GaussianComponent> {
        (0..self.weight.len())
            .map(|i| GaussianComponent {
                weight: self.weight[i],
                mean: self.mean[i],
                variance: self.variance[i],
            })
            .collect()
    }
}

/// E-step: fills `gamma` (row-major, M × N) and returns the log-likelihood.
fn e_step(samples: &[f64], params: &Params, gamma: &mut [f64]) -> f64 {
    let n = params.weight.len();
    let comps = params.as_components();
    let mut ll = 0.0;
    for (j, &x) in samples.iter().enumerate() {
        let row = &mut gamma[j * n..(j + 1) * n];
        let lse = log_sum_exp_terms(&comps, x, row);
        for g in row.iter_mut() {
            *g = (*g - lse).exp();
        }
        ll += lse;
    }
    ll
}

/// Fits an `cfg.components`-component mixture to `samples`.
pub fn em_fit(samples: &[f64], cfg: &EmConfig) -> Result<(Gmm, EmReport), GmmError> {
    let n = cfg.components;
    check_samples(samples, n)?;
    let m = samples.len();
    let mf = m as f64;
    let floor = cfg.variance_floor;

    let sample_mean = samples.iter().sum::<f64>() / mf;
    let sample_sd = (samples.iter().map(|x| (x - sample_mean).powi(2)).sum::<f64>() / mf).sqrt();

    let partition = kmeans_partition(samples, n, cfg.seed)?;
    let mut params = Params {
        weight: partition.classes.iter().map(|c| c.weight).collect(),
        mean: partition.classes.iter().map(|c| c.mean).collect(),
        variance: partition.classes.iter().map(|c| c.variance.max(floor)).collect(),
    };

    let mut gamma = vec![0.0; m * n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut floor_resets = 0;

    loop {
        let ll = e_step(samples, &params, &mut gamma);
        let prev = trace.last().copied();
        trace.push(ll);
        if let Some(prev) = prev {
            if (ll - prev).abs() < cfg.tol {
                converged = true;
                break;
            }
        }
        if iterations >= cfg.max_iter {
            break;
        }

        // M-step
        let mut resp_sum = vec![0.0; n];
        let mut weighted_x = vec![0.0; n];
        for (j, &x) in samples.iter().enumerate() {
            for i in 0..n {
                let g = gamma[j * n + i];
                resp_sum[i] += g;
                weighted_x[i] += g * x;
            }
        }
        for i in 0..n {
            params.mean[i] = if resp_sum[i] > 0.0 {
                weighted_x[i] / resp_sum[i]
            } else {
                params.mean[i]
            };
        }
        let mut weighted_sq = vec![0.0; n];
        for (j, &x) in samples.iter().enumerate() {
            for i in 0..n {
                weighted_sq[i] += gamma[j * n + i] * (x - params.mean[i]).powi(2);
            }
        }
        for i in 0..n {
            params.weight[i] = resp_sum[i] / mf;
            let var = if resp_sum[i] > 0.0 {
                weighted_sq[i] / resp_sum[i]
            } else {
                0.0
            };
            if var < floor || params.weight[i] <= 0.0 {
                let sign = if floor_resets % 2 == 0 { 1.0 } else { -1.0 };
                floor_resets += 1;
                if floor_resets > cfg.max_floor_resets {
                    return Err(GmmError::DegenerateComponent {
                        resets: floor_resets,
                        limit: cfg.max_floor_resets,
                    });
                }
                params.variance[i] = floor;
                params.mean[i] += sign * sample_sd;
                if params.weight[i] <= 0.0 {
                    params.weight[i] = 1.0 / mf;
                }
            } else {
                params.variance[i] = var;
            }
        }
        let total: f64 = params.weight.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            // Only reachable after a zero-weight reset.
            for w in params.weight.iter_mut() {
                *w /= total;
            }
        }
        debug_assert!((params.weight.iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOL);
        iterations += 1;
    }

    let final_ll = *trace.last().expect("at least one E-step");
    let snapshot = cfg.keep_responsibilities.then(|| {
        gamma
            .chunks(n)
            .map(|row| row.to_vec())
            .collect::<Vec<_>>()
    });
    let gmm = Gmm::new(params.as_components())?;
    Ok((
        gmm,
        EmReport {
            iterations,
            final_log_likelihood: final_ll,
            converged,
            log_likelihood_trace: trace,
            floor_resets,
            responsibility_snapshot: snapshot,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kmeans_separates_two_blocks() {
        let x = [0.0, 0.0, 0.0, 10.0, 10.0, 10.0];
        let p = kmeans_partition(&x, 2, 1).unwrap();
        assert_eq!(p.labels, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(p.classes[0].weight, 0.5);
        assert_eq!(p.classes[1].weight, 0.5);
        assert_eq!(p.classes[0].mean, 0.0);
        assert_eq!(p.classes[1].mean, 10.0);
    }

    #[test]
    fn kmeans_needs_enough_samples() {
        assert!(matches!(
            kmeans_partition(&[1.0, 2.0, 3.0], 5, 0),
            Err(GmmError::TooFewSamples { needed: 5, got: 3 })
        ));
    }

    #[test]
    fn kmeans_keeps_all_classes_on_ties() {
        let x = [0.4; 6];
        let p = kmeans_partition(&x, 3, 9).unwrap();
        assert!(p.classes.iter().all(|c| c.size > 0));
    }

    #[test]
    fn em_on_point_mass_hits_floor() {
        let x = [0.37; 50];
        let (g, report) = em_fit(&x, &EmConfig::with_components(1)).unwrap();
        let c = g.components()[0];
        assert_eq!(c.mean, 0.37);
        assert_eq!(c.variance, VARIANCE_FLOOR);
        assert_eq!(c.weight, 1.0);
        assert!(report.converged);
    }

    #[test]
    fn gmm_validation() {
        assert!(Gmm::new(vec![]).is_err());
        assert!(matches!(
            Gmm::new(vec![GaussianComponent::new(0.5, 0.0, 1.0).unwrap()]),
            Err(GmmError::WeightsDoNotSumToOne(_))
        ));
        assert!(GaussianComponent::new(0.0, 0.0, 1.0).is_err());
        assert!(GaussianComponent::new(0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn json_round_trip_uses_fixed_keys() {
        let g = Gmm::new(vec![
            GaussianComponent::new(0.25, 0.1, 0.01).unwrap(),
            GaussianComponent::new(0.75, 0.4, 0.02).unwrap(),
        ])
        .unwrap();
        let text = g.to_json();
        assert!(text.contains("\"components\""));
        assert!(text.contains("\"weight\""));
        assert_eq!(Gmm::from_json(&text).unwrap(), g);
        assert!(Gmm::from_json(r#"{"components":[{"weight":0.4,"mean":0,"variance":1}]}"#).is_err());
    }

    #[test]
    fn pdf_and_cdf_basics() {
        let g = Gmm::gaussian(0.0, 1.0).unwrap();
        assert!((g.pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(g.cdf(0.0), 0.5);
        assert_eq!(g.cdf(-1e6), 0.0);
        assert_eq!(g.cdf(1e6), 1.0);
        let sym = Gmm::new(vec![
            GaussianComponent::new(0.5, 0.3, 0.01).unwrap(),
            GaussianComponent::new(0.5, 0.7, 0.01).unwrap(),
        ])
        .unwrap();
        for d in [0.0, 0.05, 0.13, 0.4] {
            assert!((sym.pdf(0.5 - d) - sym.pdf(0.5 + d)).abs() < 1e-12);
        }
    }

    #[test]
    fn collapse_matches_moments() {
        let g = Gmm::new(vec![
            GaussianComponent::new(0.5, -1.0, 0.5).unwrap(),
            GaussianComponent::new(0.5, 1.0, 0.5).unwrap(),
        ])
        .unwrap();
        let c = g.collapse();
        assert_eq!(c.components()[0].mean, 0.0);
        assert!((c.components()[0].variance - 1.5).abs() < 1e-15);
    }
}
