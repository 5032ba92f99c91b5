//! Telemetry CSV, metrics JSON, and table rendering.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use bdpl_core::eval::MetricsReport;
use bdpl_core::model::EpochTelemetry;

/// Append-only per-epoch rows; floats use the shortest round-trip
/// representation so files are byte-reproducible.
pub fn telemetry_csv(rows: &[EpochTelemetry]) -> String {
    let mut out = String::from("epoch,rec_loss,cl_short,cl_long,valid_hr10,seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.rec_loss, r.cl_short, r.cl_long, r.valid_hr10, r.seconds
        ));
    }
    out
}

pub fn write_telemetry(path: &Path, rows: &[EpochTelemetry]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, telemetry_csv(rows)).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Metrics JSON with the exact key set
/// `{hr@5, hr@10, hr@20, ndcg@5, ndcg@10, ndcg@20, instances, seconds}`.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsJson {
    #[serde(rename = "hr@5")]
    pub hr5: f64,
    #[serde(rename = "hr@10")]
    pub hr10: f64,
    #[serde(rename = "hr@20")]
    pub hr20: f64,
    #[serde(rename = "ndcg@5")]
    pub ndcg5: f64,
    #[serde(rename = "ndcg@10")]
    pub ndcg10: f64,
    #[serde(rename = "ndcg@20")]
    pub ndcg20: f64,
    pub instances: usize,
    pub seconds: f64,
}

impl From<&MetricsReport> for MetricsJson {
    fn from(r: &MetricsReport) -> Self {
        MetricsJson {
            hr5: r.hr_at(5),
            hr10: r.hr_at(10),
            hr20: r.hr_at(20),
            ndcg5: r.ndcg_at(5),
            ndcg10: r.ndcg_at(10),
            ndcg20: r.ndcg_at(20),
            instances: r.instances,
            seconds: r.seconds,
        }
    }
}

pub fn metrics_json(report: &MetricsReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(&MetricsJson::from(report))? + "\n")
}

pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, metrics_json(report)?).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Aligned-column text of one report.
pub fn metrics_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}\n",
        "split", "instances", "hr@5", "hr@10", "hr@20", "ndcg@5", "ndcg@10", "ndcg@20", "seconds"
    ));
    out.push_str(&format!(
        "{:<8} {:>9} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>9.2}\n",
        report.split,
        report.instances,
        report.hr_at(5),
        report.hr_at(10),
        report.hr_at(20),
        report.ndcg_at(5),
        report.ndcg_at(10),
        report.ndcg_at(20),
        report.seconds
    ));
    out
}

/// One row of an experiment-suite comparison.
pub struct VariantRow {
    pub name: String,
    pub hr10: Option<f64>,
    pub ndcg10: Option<f64>,
    pub error: Option<String>,
}

pub fn experiment_table(rows: &[VariantRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<14} {:>8} {:>9}  {}\n", "variant", "hr@10", "ndcg@10", "status"));
    for row in rows {
        match (&row.hr10, &row.ndcg10, &row.error) {
            (Some(hr), Some(ndcg), None) => {
                out.push_str(&format!("{:<14} {:>8.4} {:>9.4}  ok\n", row.name, hr, ndcg));
            }
            _ => {
                let msg = row.error.as_deref().unwrap_or("failed");
                out.push_str(&format!("{:<14} {:>8} {:>9}  FAILED: {msg}\n", row.name, "-", "-"));
            }
        }
    }
    out
}
