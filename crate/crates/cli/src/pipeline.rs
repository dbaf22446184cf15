//! The end-to-end experiment: train, retrain, unlearn, recover, report.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json  report.json  report.csv  history.csv
//! seed-<s>/partition.json  original.ckpt  original_history.csv
//! seed-<s>/client-<u>/retrained.ckpt  retrained_history.csv
//! <method>/report.json  report.csv
//! <method>/seed-<s>/client-<u>/unlearned.ckpt  unlearning.json
//!     recovered.ckpt  recovery.json  recovery_history.csv  report.json
//! ```
//!
//! Original and retrained models are keyed by the training settings only, so runs of
//! different methods in the same directory share them.

use std::path::{Path, PathBuf};

use fedquit_core::data::{
    forget_retain_split, generate_blobs, generate_blobs_from, load_csv, Dataset, FederationData,
    PartitionManifest, PartitionSpec,
};
use fedquit_core::evaluation::{
    evaluate_model, report, MetricsReport, ModelMetrics, RecoverySummary, RunId,
};
use fedquit_core::federation::{recover, run_fedavg, FederationState};
use fedquit_core::nn::{Architecture, ParameterSet};
use fedquit_core::rng::{stream, Stream};
use fedquit_core::unlearning::{fedquit_unlearn, natural_baseline};
use log::info;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    history_rows, load_checkpoint, read_csv, read_json, save_checkpoint, write_csv, write_json,
    HistoryRow, Manifest, ReportRow,
};
use crate::config::{DatasetSource, ExperimentConfig, Method};
use crate::error::{CliError, Result};

/// Data, architecture and initial model shared by every run of one seed.
pub struct SeedSetup {
    pub seed: u64,
    pub fed: FederationData,
    pub arch: Architecture,
    pub init: ParameterSet,
    pub partition: PartitionManifest,
}

pub fn setup_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedSetup> {
    let (train, test) = match &cfg.dataset {
        DatasetSource::Blobs {
            num_classes,
            per_class,
            dim,
            spread,
            test_per_class,
        } => (
            generate_blobs(*num_classes, *per_class, *dim, *spread, seed)?,
            generate_blobs_from(
                *num_classes,
                *test_per_class,
                *dim,
                *spread,
                &mut stream(seed, Stream::TestData),
            )?,
        ),
        DatasetSource::Csv {
            train,
            test,
            num_classes,
        } => load_csv_pair(train, test, *num_classes)?,
    };
    let mut sizes = vec![train.feature_dim()];
    sizes.extend(&cfg.file.model.hidden);
    sizes.push(train.num_classes());
    let arch = Architecture::new(sizes, cfg.file.model.activation)?;
    let spec = PartitionSpec {
        kind: cfg.partition,
        num_clients: cfg.num_clients,
        seed,
    };
    let fed = FederationData::from_partition(&train, test, &spec)?;
    let partition = PartitionManifest::new(spec, &fed);
    let init = ParameterSet::glorot_uniform(&arch, &mut stream(seed, Stream::Init));
    Ok(SeedSetup {
        seed,
        fed,
        arch,
        init,
        partition,
    })
}

fn load_csv_pair(
    train: &Path,
    test: &Path,
    num_classes: Option<usize>,
) -> Result<(Dataset, Dataset)> {
    let read = |path: &Path, c: Option<usize>| {
        load_csv(path, c).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    };
    let classes = match num_classes {
        Some(c) => c,
        None => read(train, None)?
            .num_classes()
            .max(read(test, None)?.num_classes()),
    };
    let (train_set, test_set) = (read(train, Some(classes))?, read(test, Some(classes))?);
    if train_set.feature_dim() != test_set.feature_dim() {
        return Err(CliError::config(
            "test",
            format!(
                "test features have dimension {}, train has {}",
                test_set.feature_dim(),
                train_set.feature_dim()
            ),
        ));
    }
    Ok((train_set, test_set))
}

/// Federation state right after the unlearning step, rebuilt from checkpoints.
///
/// Returns the state and the bytes the step cost.
pub fn state_after_unlearning(
    cfg: &ExperimentConfig,
    seed: u64,
    original: &ParameterSet,
    unlearned: ParameterSet,
    u: usize,
) -> Result<(FederationState, u64)> {
    let mut state = FederationState::restore(
        original.clone(),
        &cfg.federation_for(seed),
        cfg.num_clients,
        cfg.federation.rounds,
    );
    let bytes = match cfg.method {
        Method::Fedquit(_) => state.unlearning_round(unlearned, u)?,
        Method::Natural => {
            state.replace_global(unlearned)?;
            0
        }
    };
    Ok((state, bytes))
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std, n })
    }
}

/// Aggregate over all clients and seeds of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub runs: usize,
    pub converged_runs: usize,
    pub test_acc: MeanStd,
    pub forget_acc: MeanStd,
    pub forget_acc_delta: MeanStd,
    pub mia_song: MeanStd,
    pub mia_song_delta: MeanStd,
    pub mia_yeom: MeanStd,
    pub mia_yeom_delta: MeanStd,
    /// Original test accuracy minus test accuracy right after unlearning.
    pub test_acc_drop: MeanStd,
    /// Over converged runs only.
    pub recovery_rounds: Option<MeanStd>,
    pub ce: Option<MeanStd>,
    pub bytes_total: MeanStd,
}

impl Summary {
    pub fn of(method: &str, reports: &[MetricsReport]) -> Result<Summary> {
        let stat = |f: &dyn Fn(&MetricsReport) -> f64| {
            MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>())
                .ok_or_else(|| CliError::Runtime("summary over zero reports".into()))
        };
        let converged: Vec<&MetricsReport> = reports.iter().filter(|r| r.converged).collect();
        Ok(Summary {
            method: method.to_string(),
            runs: reports.len(),
            converged_runs: converged.len(),
            test_acc: stat(&|r| r.unlearned.test_acc)?,
            forget_acc: stat(&|r| r.unlearned.forget_acc)?,
            forget_acc_delta: stat(&|r| r.deltas.forget_acc)?,
            mia_song: stat(&|r| r.unlearned.mia_song_rate)?,
            mia_song_delta: stat(&|r| r.deltas.mia_song)?,
            mia_yeom: stat(&|r| r.unlearned.mia_yeom_rate)?,
            mia_yeom_delta: stat(&|r| r.deltas.mia_yeom)?,
            test_acc_drop: stat(&|r| r.original.test_acc - r.unlearned.test_acc)?,
            recovery_rounds: MeanStd::of(
                &converged
                    .iter()
                    .filter_map(|r| r.recovery_rounds)
                    .map(|x| x as f64)
                    .collect::<Vec<_>>(),
            ),
            ce: MeanStd::of(&converged.iter().filter_map(|r| r.ce).collect::<Vec<_>>()),
            bytes_total: stat(&|r| r.bytes_total as f64)?,
        })
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub config_hash: String,
    pub reports: Vec<MetricsReport>,
    pub summary: Summary,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub out_dir: PathBuf,
    pub run: RunReport,
}

impl PipelineOutcome {
    pub fn all_converged(&self) -> bool {
        self.run.reports.iter().all(|r| r.converged)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UnlearningRecord {
    bytes: u64,
    repaired_targets: usize,
    batches: usize,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    manifest: Manifest,
    training_hash: String,
    method_hash: String,
    method: String,
}

impl Run<'_> {
    /// Loads a finished stage or computes and records it.
    fn stage<T>(
        &mut self,
        name: &str,
        hash_is_training: bool,
        files: &[&str],
        load: impl FnOnce(&Path) -> Result<T>,
        compute: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<T> {
        let hash = if hash_is_training {
            self.training_hash.clone()
        } else {
            self.method_hash.clone()
        };
        if self.manifest.is_done(self.out, name, &hash, files) {
            info!("{name}: reusing");
            return load(self.out);
        }
        info!("{name}: running");
        let value = compute(self.out)?;
        self.manifest.mark(name, &hash, files);
        self.manifest.save(self.out)?;
        Ok(value)
    }
}

/// Runs every (seed, client) combination of `cfg` and writes all artifacts.
///
/// Completed stages recorded in an existing manifest are reused. Non-convergence is
/// reported in the outcome, not as an error.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutcome> {
    let out = cfg.out_dir.clone();
    crate::artifacts::ensure_dir(&out)?;
    let method = cfg.method.tag();
    let mut manifest = match Manifest::load(&out)? {
        Some(m) => m,
        None => Manifest {
            config_hash: String::new(),
            training_hash: String::new(),
            config: cfg.file.clone(),
            seeds: Vec::new(),
            method: String::new(),
            stages: Default::default(),
            files: Vec::new(),
            complete: false,
        },
    };
    manifest.config_hash = cfg.config_hash();
    manifest.training_hash = cfg.training_hash();
    manifest.config = cfg.file.clone();
    manifest.seeds = cfg.seeds.clone();
    manifest.method = method.clone();
    manifest.complete = false;
    manifest.save(&out)?;

    let mut run = Run {
        cfg,
        out: &out,
        manifest,
        training_hash: cfg.training_hash(),
        method_hash: cfg.method_hash(),
        method: method.clone(),
    };
    let mut reports = Vec::new();
    let mut history = Vec::new();
    for &seed in &cfg.seeds {
        run_seed(&mut run, seed, &mut reports, &mut history)?;
    }

    let run_report = RunReport {
        method: method.clone(),
        config_hash: cfg.config_hash(),
        summary: Summary::of(&method, &reports)?,
        reports,
    };
    let rows: Vec<ReportRow> = run_report.reports.iter().map(ReportRow::from).collect();
    for dir in [out.clone(), out.join(&method)] {
        write_json(&dir.join("report.json"), &run_report)?;
        write_csv(&dir.join("report.csv"), &rows)?;
    }
    write_csv(&out.join("history.csv"), &history)?;

    let mut manifest = run.manifest;
    for f in ["report.json", "report.csv", "history.csv"] {
        manifest.mark(f, &run.method_hash, &[f]);
    }
    let per_method = [
        format!("{method}/report.json"),
        format!("{method}/report.csv"),
    ];
    manifest.mark(
        &format!("{method}/report"),
        &run.method_hash,
        &[&per_method[0], &per_method[1]],
    );
    manifest.complete = true;
    manifest.save(&out)?;
    Ok(PipelineOutcome {
        out_dir: out,
        run: run_report,
    })
}

fn run_seed(
    run: &mut Run<'_>,
    seed: u64,
    reports: &mut Vec<MetricsReport>,
    history: &mut Vec<HistoryRow>,
) -> Result<()> {
    let cfg = run.cfg;
    let setup = setup_seed(cfg, seed)?;
    let fcfg = cfg.federation_for(seed);
    let seed_dir = format!("seed-{seed}");
    write_json(
        &run.out.join(&seed_dir).join("partition.json"),
        &setup.partition,
    )?;

    let ckpt = format!("{seed_dir}/original.ckpt");
    let hist = format!("{seed_dir}/original_history.csv");
    let (original, original_history) = run.stage(
        &format!("{seed_dir}/original"),
        true,
        &[&ckpt, &hist],
        |out| {
            Ok((
                load_checkpoint(&out.join(&ckpt))?,
                read_csv::<HistoryRow>(&out.join(&hist))?,
            ))
        },
        |out| {
            let (state, h) = run_fedavg(&setup.fed, &setup.arch, &fcfg, setup.init.clone(), &[])?;
            let rows = history_rows(seed, "original", None, "", &h);
            save_checkpoint(&out.join(&ckpt), state.global())?;
            write_csv(&out.join(&hist), &rows)?;
            Ok((state.into_global(), rows))
        },
    )?;
    history.extend(original_history);

    for u in cfg.designated_clients() {
        let report = run_client(run, &setup, &original, u, history)?;
        reports.push(report);
    }
    Ok(())
}

fn run_client(
    run: &mut Run<'_>,
    setup: &SeedSetup,
    original: &ParameterSet,
    u: usize,
    history: &mut Vec<HistoryRow>,
) -> Result<MetricsReport> {
    let cfg = run.cfg;
    let seed = setup.seed;
    let (fed, arch) = (&setup.fed, &setup.arch);
    let fcfg = cfg.federation_for(seed);
    let client_dir = format!("seed-{seed}/client-{u}");

    let ckpt = format!("{client_dir}/retrained.ckpt");
    let hist = format!("{client_dir}/retrained_history.csv");
    let (retrained, retrained_history) = run.stage(
        &format!("{client_dir}/retrained"),
        true,
        &[&ckpt, &hist],
        |out| {
            Ok((
                load_checkpoint(&out.join(&ckpt))?,
                read_csv::<HistoryRow>(&out.join(&hist))?,
            ))
        },
        |out| {
            let (state, h) = run_fedavg(fed, arch, &fcfg, setup.init.clone(), &[u])?;
            let rows = history_rows(seed, "retrained", Some(u), "", &h);
            save_checkpoint(&out.join(&ckpt), state.global())?;
            write_csv(&out.join(&hist), &rows)?;
            Ok((state.into_global(), rows))
        },
    )?;
    history.extend(retrained_history);

    // Only client u's own shard is handed to the unlearning routine.
    let forget = fed.shard(u)?.clone();
    let method = run.method.clone();
    let method_dir = format!("{method}/{client_dir}");
    let ckpt = format!("{method_dir}/unlearned.ckpt");
    let record = format!("{method_dir}/unlearning.json");
    let (unlearned, unlearning) = run.stage(
        &format!("{method_dir}/unlearned"),
        false,
        &[&ckpt, &record],
        |out| {
            Ok((
                load_checkpoint(&out.join(&ckpt))?,
                read_json::<UnlearningRecord>(&out.join(&record))?,
            ))
        },
        |out| {
            let (model, repaired_targets, batches) = match cfg.method {
                Method::Fedquit(_) => {
                    let outcome = fedquit_unlearn(original, arch, &forget, &cfg.unlearn_for(seed))?;
                    (
                        outcome.model,
                        outcome.repaired_targets,
                        outcome.batch_losses.len(),
                    )
                }
                Method::Natural => (natural_baseline(original), 0, 0),
            };
            let (_, bytes) = state_after_unlearning(cfg, seed, original, model.clone(), u)?;
            let rec = UnlearningRecord {
                bytes,
                repaired_targets,
                batches,
            };
            save_checkpoint(&out.join(&ckpt), &model)?;
            write_json(&out.join(&record), &rec)?;
            Ok((model, rec))
        },
    )?;

    let (_, retain) = forget_retain_split(fed, u)?;
    let metrics = |p: &ParameterSet| -> Result<ModelMetrics> {
        Ok(evaluate_model(
            p,
            arch,
            &forget,
            &retain,
            fed.test_set(),
            seed,
        )?)
    };
    let retrained_metrics = metrics(&retrained)?;
    let target = retrained_metrics.test_acc;

    let ckpt = format!("{method_dir}/recovered.ckpt");
    let summary_file = format!("{method_dir}/recovery.json");
    let hist = format!("{method_dir}/recovery_history.csv");
    let (recovery, recovery_history) = run.stage(
        &format!("{method_dir}/recovered"),
        false,
        &[&ckpt, &summary_file, &hist],
        |out| {
            Ok((
                read_json::<RecoverySummary>(&out.join(&summary_file))?,
                read_csv::<HistoryRow>(&out.join(&hist))?,
            ))
        },
        |out| {
            let (mut state, _) = state_after_unlearning(cfg, seed, original, unlearned.clone(), u)?;
            let rec = recover(
                &mut state,
                fed,
                arch,
                &fcfg,
                &[u],
                target,
                cfg.max_recovery_rounds,
            )?;
            let summary = RecoverySummary {
                rounds: rec.rounds,
                max_rounds: cfg.max_recovery_rounds,
                target_test_acc: target,
                final_test_acc: rec.final_test_acc,
                bytes: rec.bytes,
            };
            let rows = history_rows(seed, "recovery", Some(u), &method, &rec.history);
            save_checkpoint(&out.join(&ckpt), state.global())?;
            write_json(&out.join(&summary_file), &summary)?;
            write_csv(&out.join(&hist), &rows)?;
            Ok((summary, rows))
        },
    )?;
    history.extend(recovery_history);
    if recovery.rounds.is_none() {
        log::warn!(
            "seed {seed} client {u}: recovery did not reach {:.4} within {} rounds",
            target,
            cfg.max_recovery_rounds
        );
    }

    let id = RunId {
        method,
        seed,
        client: u,
    };
    let report = report(
        id,
        metrics(&unlearned)?,
        retrained_metrics,
        metrics(original)?,
        &recovery,
        cfg.federation.rounds,
        unlearning.bytes,
    );
    let file = format!("{method_dir}/report.json");
    write_json(&run.out.join(&file), &report)?;
    let hash = run.method_hash.clone();
    run.manifest
        .mark(&format!("{method_dir}/report"), &hash, &[&file]);
    run.manifest.save(run.out)?;
    Ok(report)
}
