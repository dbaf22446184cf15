//! Method comparison tables built from saved reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fedquit_core::evaluation::MetricsReport;
use serde::{Deserialize, Serialize};

use crate::artifacts::{write_csv, write_json};
use crate::error::{CliError, Result};
use crate::pipeline::RunReport;

/// One table row per method, columns in the documented order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    /// Mean recovery rounds over converged runs; empty when none converged.
    pub rounds: Option<f64>,
    pub ce: Option<f64>,
    pub test_acc: f64,
    pub forget_acc: f64,
    pub forget_acc_delta: f64,
    pub mia_song: f64,
    pub mia_song_delta: f64,
    pub mia_yeom: f64,
    pub mia_yeom_delta: f64,
}

pub const COLUMNS: [&str; 10] = [
    "method",
    "rounds",
    "ce",
    "test_acc",
    "forget_acc",
    "forget_acc_delta",
    "mia_song",
    "mia_song_delta",
    "mia_yeom",
    "mia_yeom_delta",
];

/// Reads the reports in `path`: a pipeline `report.json`, a list of per-run reports,
/// or a single per-run report.
pub fn load_reports(path: &Path) -> Result<Vec<MetricsReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let parse_error = |message: String| CliError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| parse_error(e.to_string()))?;
    let reports = if value.get("reports").is_some() {
        serde_json::from_value::<RunReport>(value).map(|r| r.reports)
    } else if value.is_array() {
        serde_json::from_value::<Vec<MetricsReport>>(value)
    } else {
        serde_json::from_value::<MetricsReport>(value).map(|r| vec![r])
    }
    .map_err(|e| parse_error(e.to_string()))?;
    if reports.is_empty() {
        return Err(parse_error("no reports".into()));
    }
    Ok(reports)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Averages runs per method. Deltas are recomputed from the raw forget and attack
/// rates of the unlearned and retrained models.
pub fn comparison_rows(reports: &[MetricsReport]) -> Vec<ComparisonRow> {
    let mut by_method: BTreeMap<&str, Vec<&MetricsReport>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in reports {
        if !by_method.contains_key(r.method.as_str()) {
            order.push(r.method.as_str());
        }
        by_method.entry(&r.method).or_default().push(r);
    }
    order
        .into_iter()
        .map(|method| {
            let runs = &by_method[method];
            let avg = |f: &dyn Fn(&MetricsReport) -> f64| {
                mean(runs.iter().map(|r| f(r))).unwrap_or(f64::NAN)
            };
            ComparisonRow {
                method: method.to_string(),
                rounds: mean(
                    runs.iter()
                        .filter_map(|r| r.recovery_rounds)
                        .map(|x| x as f64),
                ),
                ce: mean(runs.iter().filter_map(|r| r.ce)),
                test_acc: avg(&|r| r.unlearned.test_acc),
                forget_acc: avg(&|r| r.unlearned.forget_acc),
                forget_acc_delta: avg(&|r| (r.unlearned.forget_acc - r.retrained.forget_acc).abs()),
                mia_song: avg(&|r| r.unlearned.mia_song_rate),
                mia_song_delta: avg(&|r| {
                    (r.unlearned.mia_song_rate - r.retrained.mia_song_rate).abs()
                }),
                mia_yeom: avg(&|r| r.unlearned.mia_yeom_rate),
                mia_yeom_delta: avg(&|r| {
                    (r.unlearned.mia_yeom_rate - r.retrained.mia_yeom_rate).abs()
                }),
            }
        })
        .collect()
}

/// Writes `comparison.csv` and `comparison.json` into `out_dir`.
pub fn compare(paths: &[PathBuf], out_dir: &Path) -> Result<Vec<ComparisonRow>> {
    if paths.is_empty() {
        return Err(CliError::config(
            "reports",
            "at least one report is required",
        ));
    }
    let mut reports = Vec::new();
    for p in paths {
        reports.extend(load_reports(p)?);
    }
    let rows = comparison_rows(&reports);
    write_csv(&out_dir.join("comparison.csv"), &rows)?;
    write_json(&out_dir.join("comparison.json"), &rows)?;
    Ok(rows)
}
