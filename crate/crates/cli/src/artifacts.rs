//! On-disk artifacts: JSON documents, CSV tables, checkpoints and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fedquit_core::evaluation::MetricsReport;
use fedquit_core::federation::RoundReport;
use fedquit_core::nn::ParameterSet;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ConfigFile;
use crate::error::{CliError, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes via a temporary file and a rename so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn save_checkpoint(path: &Path, params: &ParameterSet) -> Result<()> {
    write_atomic(path, &params.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterSet> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    ParameterSet::from_bytes(&bytes).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// One row of `history.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub seed: u64,
    pub phase: String,
    /// Unlearning client, empty for the original model.
    pub client: Option<usize>,
    /// Unlearning method, empty for training phases.
    pub method: String,
    pub round: usize,
    pub participants: usize,
    pub mean_client_loss: f64,
    pub test_accuracy: f64,
    pub bytes: u64,
}

pub fn history_rows(
    seed: u64,
    phase: &str,
    client: Option<usize>,
    method: &str,
    history: &[RoundReport],
) -> Vec<HistoryRow> {
    history
        .iter()
        .map(|r| HistoryRow {
            seed,
            phase: phase.to_string(),
            client,
            method: method.to_string(),
            round: r.round,
            participants: r.participants.len(),
            mean_client_loss: r.mean_client_loss(),
            test_accuracy: r.test_accuracy,
            bytes: r.bytes,
        })
        .collect()
}

/// One row of `report.csv`: a flattened [`MetricsReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub seed: u64,
    pub client: usize,
    pub test_acc: f64,
    pub forget_acc: f64,
    pub retain_acc: f64,
    pub mia_song: f64,
    pub mia_yeom: f64,
    pub forget_acc_delta: f64,
    pub mia_song_delta: f64,
    pub mia_yeom_delta: f64,
    pub retrained_test_acc: f64,
    pub retrained_forget_acc: f64,
    pub retrained_mia_song: f64,
    pub retrained_mia_yeom: f64,
    pub original_test_acc: f64,
    pub original_forget_acc: f64,
    pub original_mia_song: f64,
    pub original_mia_yeom: f64,
    pub recovery_rounds: Option<usize>,
    pub converged: bool,
    pub retrain_rounds: usize,
    pub ce: Option<f64>,
    pub recovered_test_acc: f64,
    pub unlearning_bytes: u64,
    pub recovery_bytes: u64,
    pub bytes_total: u64,
}

impl From<&MetricsReport> for ReportRow {
    fn from(r: &MetricsReport) -> Self {
        Self {
            method: r.method.clone(),
            seed: r.seed,
            client: r.client,
            test_acc: r.unlearned.test_acc,
            forget_acc: r.unlearned.forget_acc,
            retain_acc: r.unlearned.retain_acc,
            mia_song: r.unlearned.mia_song_rate,
            mia_yeom: r.unlearned.mia_yeom_rate,
            forget_acc_delta: r.deltas.forget_acc,
            mia_song_delta: r.deltas.mia_song,
            mia_yeom_delta: r.deltas.mia_yeom,
            retrained_test_acc: r.retrained.test_acc,
            retrained_forget_acc: r.retrained.forget_acc,
            retrained_mia_song: r.retrained.mia_song_rate,
            retrained_mia_yeom: r.retrained.mia_yeom_rate,
            original_test_acc: r.original.test_acc,
            original_forget_acc: r.original.forget_acc,
            original_mia_song: r.original.mia_song_rate,
            original_mia_yeom: r.original.mia_yeom_rate,
            recovery_rounds: r.recovery_rounds,
            converged: r.converged,
            retrain_rounds: r.retrain_rounds,
            ce: r.ce,
            recovered_test_acc: r.recovered_test_acc,
            unlearning_bytes: r.unlearning_bytes,
            recovery_bytes: r.recovery_bytes,
            bytes_total: r.bytes_total,
        }
    }
}

/// Record of what a run directory contains and which stages are finished.
///
/// Each completed stage maps to the hash of the configuration that produced it, so a
/// rerun with the same settings skips it and a changed setting recomputes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub training_hash: String,
    pub config: ConfigFile,
    pub seeds: Vec<u64>,
    pub method: String,
    pub stages: BTreeMap<String, String>,
    /// Paths relative to the run directory.
    pub files: Vec<String>,
    pub complete: bool,
}

impl Manifest {
    pub fn path(out_dir: &Path) -> PathBuf {
        out_dir.join("manifest.json")
    }

    pub fn load(out_dir: &Path) -> Result<Option<Manifest>> {
        let path = Self::path(out_dir);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        write_json(&Self::path(out_dir), self)
    }

    /// A stage counts as done when it was recorded under `hash` and all its files exist.
    pub fn is_done(&self, out_dir: &Path, stage: &str, hash: &str, files: &[&str]) -> bool {
        self.stages.get(stage).is_some_and(|h| h == hash)
            && files.iter().all(|f| out_dir.join(f).exists())
    }

    pub fn mark(&mut self, stage: &str, hash: &str, files: &[&str]) {
        self.stages.insert(stage.to_string(), hash.to_string());
        for f in files {
            if !self.files.iter().any(|x| x == f) {
                self.files.push(f.to_string());
            }
        }
        self.files.sort();
    }
}
