//! Scenario-driven runner for the frequency-mixture pipeline.
//!
//! `run` executes one scenario file end to end and writes its artifacts into
//! a run directory; `plot-data` turns a finished run directory into
//! whitespace-separated tables; `validate` only parses.

// `!(x > 0.0)` is deliberate: NaN has to fail these checks too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod manifest;
pub mod output;
pub mod plot;
pub mod run;
pub mod scenario;

pub use error::CliError;
pub use plot::{emit_plot_data, PlotSummary};
pub use run::{run, RunOptions, RunSummary};
pub use scenario::Scenario;
