//! Time-evolving distributions of power-system frequency deviation under
//! stochastic wind in-feed.
//!
//! The pipeline decomposes an arbitrary wind-power distribution into a
//! weighted set of Gaussian Ornstein–Uhlenbeck sub-processes, couples each
//! one to a linear system-frequency-response model, and solves every
//! resulting linear SDE in closed form. The weighted Gaussian moments form a
//! mixture distribution of the frequency deviation at each time.
//!
//! # Pipeline
//!
//! 1. [`ingest`]: parse a predictive quantile series and draw samples from it
//! 2. [`gmm`]: fit a Gaussian mixture by k-means-initialized EM
//! 3. [`ito`]: turn each mixture component into an OU sub-process
//! 4. [`sfr`]: aggregate the VSG-SFR parameters and build one linear SDE per component
//! 5. [`analytic`]: closed-form mean and covariance, assembled into a [`FrequencyMixture`]
//! 6. [`mcs`] and [`metrics`]: Monte Carlo reference and agreement measures
//!
//! # Quick start
//!
//! ```
//! use freqmix_core::{
//!     aggregate, build_sde_system, solve_mixture, GeneralizedItoProcess, GaussianComponent, Gmm,
//!     SfrParams, TimeGrid,
//! };
//!
//! let gmm = Gmm::new(vec![
//!     GaussianComponent::new(0.4, 0.10, 0.0009).unwrap(),
//!     GaussianComponent::new(0.6, 0.25, 0.0016).unwrap(),
//! ])
//! .unwrap();
//! let params = SfrParams::single_unit(0.7, 0.3, 0.0);
//! let agg = aggregate(&params).unwrap();
//! let process = GeneralizedItoProcess::from_gmm(&gmm, 1.0).unwrap();
//! let system = build_sde_system(&agg, &params, &process, None).unwrap();
//! let grid = TimeGrid::uniform(0.0, 15.0, 0.05).unwrap();
//! let mixture = solve_mixture(&system, &grid).unwrap();
//! assert_eq!(mixture.weights(), gmm.weights().as_slice());
//! ```

// `!(x > 0.0)` is deliberate: NaN has to fail these checks too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod expm;
pub mod gmm;
pub mod ingest;
pub mod ito;
pub mod mcs;
pub mod metrics;
pub mod normal;
pub mod quad;
pub mod sfr;

mod error;

pub use analytic::{
    covariance_by_eigen, covariance_by_quadrature, solve_covariance, solve_mean, solve_mixture,
    solve_moment, CovarianceMethod, EigenWork, FrequencyMixture, GaussianMoment, MixtureSlice,
    TimeGrid,
};
pub use error::Error;
pub use expm::matrix_exponential;
pub use gmm::{em_fit, kmeans_partition, EmConfig, EmReport, GaussianComponent, Gmm, Partition};
pub use ingest::{QuantileSeries, RawQuantileSeries};
pub use ito::{diffusion_from_pdf, GeneralizedItoProcess, ItoComponent};
pub use mcs::{simulate, McsConfig, McsResult};
pub use metrics::{
    kolmogorov_distance, proportion_deviation, stddev_comparison, wasserstein_1d, PdCurve,
    StddevRow,
};
pub use sfr::{
    aggregate, build_sde_system, step_response, AggregatedSfr, LinearSdeSystem, SfrParams,
    StepResponse,
};
