//! Line-delimited JSON results: one record per seed run plus summary
//! records. Keys ending in `secs` hold wall-clock measurements; everything
//! else is reproducible from the embedded flags and configuration.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::data::{write_atomic, Result};
use crate::training::{EpochRecord, Metrics};

pub const RESULTS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub record: &'static str,
    pub format_version: u32,
    pub label: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val: Metrics,
    pub test: Metrics,
    pub iteration_secs: f64,
    pub wall_secs: f64,
    pub history: Vec<EpochRecord>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    pub test_mse_mean: f64,
    pub test_mse_std: f64,
    pub test_mae_mean: f64,
    pub test_mae_std: f64,
    pub test_mse_x10_mean: f64,
    pub test_mse_x10_std: f64,
    pub test_mae_x10_mean: f64,
    pub test_mae_x10_std: f64,
    pub iteration_secs: f64,
}

impl Aggregate {
    pub fn of(runs: &[RunRecord]) -> Self {
        let pick = |f: fn(&RunRecord) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
        let (mse, mse_sd) = pick(|r| r.test.mse);
        let (mae, mae_sd) = pick(|r| r.test.mae);
        Self {
            runs: runs.len(),
            test_mse_mean: mse,
            test_mse_std: mse_sd,
            test_mae_mean: mae,
            test_mae_std: mae_sd,
            test_mse_x10_mean: mse * 10.0,
            test_mse_x10_std: mse_sd * 10.0,
            test_mae_x10_mean: mae * 10.0,
            test_mae_x10_std: mae_sd * 10.0,
            iteration_secs: pick(|r| r.iteration_secs).0,
        }
    }

    /// `mean ± std` of the test MSE in the ×10⁻¹ convention.
    pub fn cell(&self) -> String {
        format!("{:.4} ± {:.4}", self.test_mse_x10_mean, self.test_mse_x10_std)
    }
}

/// Collects records and writes them in one atomic step.
#[derive(Debug, Default)]
pub struct ResultsFile {
    lines: Vec<String>,
}

impl ResultsFile {
    pub fn push<T: Serialize>(&mut self, record: &T) {
        self.lines
            .push(serde_json::to_string(record).expect("records serialize to JSON"));
    }

    pub fn push_value(&mut self, record: Value) {
        self.lines.push(record.to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.lines.join("\n");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// Drops every wall-clock field, recursively.
pub fn strip_timing(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("secs"));
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}
