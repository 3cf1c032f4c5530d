//! Experiment report assembly and bit-stable emission: report.json with
//! canonical key order and 17-significant-digit floats, one CSV per table,
//! and a run manifest with seeds and versions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use latent_reuse::report::{to_canonical_json, Cell, Table};

use crate::config::ExperimentConfig;

/// A reported number with its provenance: exact analytic evaluation or a
/// Monte Carlo estimate with standard error.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportValue {
    Analytic { value: f64 },
    Mc { value: f64, stderr: f64 },
}

impl ReportValue {
    pub fn value(&self) -> f64 {
        match self {
            ReportValue::Analytic { value } => *value,
            ReportValue::Mc { value, .. } => *value,
        }
    }

    pub fn stderr(&self) -> f64 {
        match self {
            ReportValue::Analytic { .. } => 0.0,
            ReportValue::Mc { stderr, .. } => *stderr,
        }
    }
}

#[derive(Debug, Default)]
pub struct ExperimentReport {
    pub scalars: BTreeMap<String, ReportValue>,
    pub notes: BTreeMap<String, String>,
    pub tables: Vec<Table>,
    /// Bulk tables written as CSV only, not embedded in report.json.
    pub csv_tables: Vec<Table>,
    /// Standalone JSON artifacts (trained models etc.), one file each.
    pub artifacts: Vec<(String, serde_json::Value)>,
}

impl ExperimentReport {
    pub fn put_analytic(&mut self, name: &str, value: f64) {
        self.scalars
            .insert(name.to_string(), ReportValue::Analytic { value });
    }

    pub fn put_mc(&mut self, name: &str, value: f64, stderr: f64) {
        self.scalars
            .insert(name.to_string(), ReportValue::Mc { value, stderr });
    }

    pub fn note(&mut self, name: &str, text: &str) {
        self.notes.insert(name.to_string(), text.to_string());
    }

    pub fn scalar(&self, name: &str) -> Option<&ReportValue> {
        self.scalars.get(name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

fn cell_to_json(cell: &Cell) -> serde_json::Value {
    match cell {
        Cell::Float(x) => serde_json::json!(x),
        Cell::Int(i) => serde_json::json!(i),
        Cell::Text(s) => serde_json::json!(s),
        Cell::Empty => serde_json::Value::Null,
    }
}

fn report_json(config: &ExperimentConfig, report: &ExperimentReport) -> serde_json::Value {
    let mut tables = serde_json::Map::new();
    for table in &report.tables {
        tables.insert(
            table.name.clone(),
            serde_json::json!({
                "columns": table.columns,
                "rows": table
                    .rows
                    .iter()
                    .map(|row| row.iter().map(cell_to_json).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            }),
        );
    }
    serde_json::json!({
        "config": serde_json::to_value(config).expect("config serializes"),
        "scalars": serde_json::to_value(&report.scalars).expect("scalars serialize"),
        "notes": serde_json::to_value(&report.notes).expect("notes serialize"),
        "tables": serde_json::Value::Object(tables),
    })
}

/// Writes report.json, tables/*.csv and manifest.json; returns the paths.
pub fn write_report(
    config: &ExperimentConfig,
    report: &ExperimentReport,
    dir: &Path,
) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let report_text = to_canonical_json(&report_json(config, report));
    let report_path = dir.join("report.json");
    latent_reuse::report::write_file(&report_path, &report_text)?;
    written.push(report_path);

    let tables_dir = dir.join("tables");
    if !report.tables.is_empty() || !report.csv_tables.is_empty() {
        std::fs::create_dir_all(&tables_dir)?;
    }
    for table in report.tables.iter().chain(report.csv_tables.iter()) {
        let path = tables_dir.join(format!("{}.csv", table.name));
        table.write_csv(&path)?;
        written.push(path);
    }

    for (name, value) in &report.artifacts {
        let path = dir.join(format!("{name}.json"));
        latent_reuse::report::write_file(&path, &to_canonical_json(value))?;
        written.push(path);
    }

    let mut hasher = Sha256::new();
    hasher.update(report_text.as_bytes());
    let digest = hasher.finalize();
    let config_hash = {
        let mut h = Sha256::new();
        h.update(to_canonical_json(&serde_json::to_value(config)?).as_bytes());
        h.finalize()
    };
    let manifest = serde_json::json!({
        "preset": config.preset,
        "root_seed": config.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": hex(&config_hash),
        "report_sha256": hex(&digest),
        "files": written
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
            .collect::<Vec<_>>(),
    });
    let manifest_path = dir.join("manifest.json");
    latent_reuse::report::write_file(&manifest_path, &to_canonical_json(&manifest))?;
    written.push(manifest_path);
    Ok(written)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
