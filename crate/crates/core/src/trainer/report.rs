use serde::{Deserialize, Serialize};

use super::StepRecord;
use crate::error::Result;

/// Mean loss terms over the steps of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub divergences: Vec<f64>,
}

/// Per-epoch loss trace; `total = recon + eta * sum(divergences)` on every entry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub eta: f64,
    pub divergence_names: Vec<String>,
    pub epochs: Vec<EpochLoss>,
}

impl LossReport {
    pub fn new(divergence_names: Vec<String>, eta: f64) -> Self {
        Self {
            eta,
            divergence_names,
            epochs: Vec::new(),
        }
    }

    pub(crate) fn push_epoch(&mut self, epoch: usize, steps: &[StepRecord]) {
        if steps.is_empty() {
            return;
        }
        let n = steps.len() as f64;
        let recon = steps.iter().map(|s| s.recon).sum::<f64>() / n;
        let divergences: Vec<f64> = (0..self.divergence_names.len())
            .map(|k| steps.iter().map(|s| s.divergences[k]).sum::<f64>() / n)
            .collect();
        let total = recon + self.eta * divergences.iter().sum::<f64>();
        self.epochs.push(EpochLoss {
            epoch,
            total,
            recon,
            divergences,
        });
    }

    /// Total objective per entry.
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }

    pub fn last(&self) -> Option<&EpochLoss> {
        self.epochs.last()
    }

    /// CSV with columns `epoch,total,recon,div_<name>...`.
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["epoch".to_string(), "total".into(), "recon".into()];
        header.extend(self.divergence_names.iter().map(|n| format!("div_{n}")));
        writer.write_record(&header).map_err(csv_err)?;
        for e in &self.epochs {
            let mut row = vec![e.epoch.to_string(), format_float(e.total), format_float(e.recon)];
            row.extend(e.divergences.iter().map(|d| format_float(*d)));
            writer.write_record(&row).map_err(csv_err)?;
        }
        let bytes = writer.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

/// Float with 9 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.8e}").parse::<f64>().map(|v| format!("{v}")).unwrap_or_else(|_| x.to_string())
}
