use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Incomplete,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub gmm: u64,
    pub mcs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsRecord {
    pub enabled: bool,
    pub n_paths: usize,
    pub dt: f64,
    pub t_end: f64,
    pub capture_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub category: String,
    pub message: String,
}

/// Run record. Everything time-dependent lives here, never in the CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: Status,
    pub tool_version: String,
    pub scenario: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub seeds: Seeds,
    /// Number of mixture components n_w.
    pub n_w: Option<usize>,
    pub lambda_w: f64,
    /// Quantile knots R when the input was a quantile series.
    pub quantile_knots: Option<usize>,
    pub solver_dt: f64,
    pub solver_t_end: f64,
    pub mcs: McsRecord,
    pub gaussian_baseline: bool,
    pub metric_times: Vec<f64>,
    pub covariance_method: Option<String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    /// MCS time over analytic time.
    pub mcs_over_analytic: Option<f64>,
    pub warnings: Vec<String>,
    pub error: Option<Failure>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(FILE_NAME);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(FILE_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: malformed manifest: {e}", path.display())))
    }
}
