//! Experiment configuration, the run loop, and the CSV/SVG artifacts it writes.

mod config;
mod output;
mod plot;
mod runner;

pub use config::{ExperimentConfig, ProviderSpec};
pub use output::{
    counts_csv, curves_csv, emit_plots, pose_audit_csv, read_curves, write_results, CURVES_HEADER,
};
pub use plot::{emit_plot, render_plot};
pub use runner::{
    image_key, probe_image, run_experiment, ExperimentResults, PoseAuditRow, ReplicationCounts,
};

use crate::error::Result;

/// Runs the experiment and writes its artifacts. Nothing is written unless the
/// whole run succeeds.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    let results = run_experiment(cfg)?;
    write_results(&results)?;
    Ok(results)
}
