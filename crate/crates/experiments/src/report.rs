use std::io::Write;
use std::path::Path;

use otpdag::trainer::format_float;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{ExperimentError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mae,
    Hellinger,
    Kl,
    Ws,
    Loss,
    RuntimeS,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Hellinger => "hellinger",
            Metric::Kl => "kl",
            Metric::Ws => "ws",
            Metric::Loss => "loss",
            Metric::RuntimeS => "runtime_s",
        }
    }
}

/// One measurement; `step` is an optimisation step, epoch, EM iteration or sample size
/// depending on the experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub seed: u64,
    pub method: String,
    pub metric: Metric,
    pub step: usize,
    pub value: f64,
}

pub const CSV_HEADER: [&str; 6] = ["experiment", "seed", "method", "metric", "step", "value"];

pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.seed.to_string(),
            r.method.clone(),
            r.metric.name().to_string(),
            r.step.to_string(),
            format_float(r.value),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::io("csv buffer", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_to_json(rows: &[ReportRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)?)
}

/// Everything needed to re-execute a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub commit: String,
    /// SHA-256 of each generated dataset, aligned with `seeds`.
    pub dataset_digests: Vec<String>,
    pub version: String,
}

/// Current git commit of the working directory, or `"unknown"` outside a repository.
pub fn commit_id() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

pub const ROWS_CSV: &str = "report.csv";
pub const ROWS_JSON: &str = "report.json";
pub const MANIFEST: &str = "manifest.json";

/// Writes `contents` to `path`, creating missing parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| ExperimentError::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| ExperimentError::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| ExperimentError::io(path, e))
}

/// Writes the rows as CSV and JSON, and the manifest, into `dir`.
pub fn write_run(dir: &Path, rows: &[ReportRow], manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    write_file(&dir.join(ROWS_CSV), &rows_to_csv(rows)?)?;
    write_file(&dir.join(ROWS_JSON), &rows_to_json(rows)?)?;
    write_file(&dir.join(MANIFEST), &serde_json::to_string_pretty(manifest)?)
}

pub fn read_rows(dir: &Path) -> Result<Vec<ReportRow>> {
    let path = dir.join(ROWS_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| ExperimentError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
