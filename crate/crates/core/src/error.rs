use thiserror::Error;

use crate::{analytic, gmm, ingest, ito, mcs, metrics, quad, sfr};

/// Any failure raised along the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Gmm(#[from] gmm::GmmError),
    #[error(transparent)]
    Ito(#[from] ito::ItoError),
    #[error(transparent)]
    Sfr(#[from] sfr::SfrError),
    #[error(transparent)]
    Solve(#[from] analytic::SolveError),
    #[error(transparent)]
    Mcs(#[from] mcs::McsError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Quadrature(#[from] quad::QuadError),
}
