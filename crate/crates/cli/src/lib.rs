//! Experiment presets, configuration and report emission for the
//! latent-reuse laboratory.

pub mod config;
pub mod presets;
pub mod report;

use std::path::{Path, PathBuf};

pub use config::{load_config, parse_config, ExperimentConfig};
pub use presets::{default_config, run, PRESET_NAMES};
pub use report::{write_report, ExperimentReport};

/// Runs a config end to end and writes report.json, tables/*.csv and
/// manifest.json under `out_dir`. Returns the report and the written paths.
pub fn run_to_dir(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> anyhow::Result<(ExperimentReport, Vec<PathBuf>)> {
    let report = run(config)?;
    let files = write_report(config, &report, out_dir)?;
    Ok((report, files))
}
