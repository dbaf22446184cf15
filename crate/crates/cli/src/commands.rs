//! Single-step commands that work on saved checkpoints.

use std::path::{Path, PathBuf};

use fedquit_core::data::forget_retain_split;
use fedquit_core::evaluation::{accuracy, evaluate_model, Deltas, ModelMetrics, RecoverySummary};
use fedquit_core::federation::{recover, run_fedavg, FederationState};
use fedquit_core::unlearning::{fedquit_unlearn, natural_baseline};
use serde::{Deserialize, Serialize};

use crate::artifacts::{history_rows, load_checkpoint, save_checkpoint, write_csv, write_json};
use crate::config::{ClientSelection, ExperimentConfig, Method};
use crate::error::{CliError, Result};
use crate::pipeline::{setup_seed, state_after_unlearning};

/// Seed for a single-run command: the first configured seed (after overrides).
pub fn single_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seeds[0]
}

/// Client for a single-run command: `--client` or the configured index.
pub fn single_client(cfg: &ExperimentConfig, client: Option<usize>) -> Result<usize> {
    match (client, cfg.clients) {
        (Some(u), _) if u < cfg.num_clients => Ok(u),
        (Some(u), _) => Err(CliError::config(
            "unlearn_client",
            format!("client {u} out of range for {} clients", cfg.num_clients),
        )),
        (None, ClientSelection::One(u)) => Ok(u),
        (None, ClientSelection::Each) => Err(CliError::config(
            "unlearn_client",
            "\"each\" needs an explicit --client for this command",
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub config_hash: String,
    pub seed: u64,
    pub excluded: Option<usize>,
    pub rounds: usize,
    pub final_test_acc: f64,
    pub bytes_total: u64,
    pub files: Vec<String>,
}

/// Trains the original model, or the retrained one when `exclude` is given.
pub fn train(cfg: &ExperimentConfig, exclude: Option<usize>) -> Result<TrainRecord> {
    let seed = single_seed(cfg);
    let setup = setup_seed(cfg, seed)?;
    let excluded: Vec<usize> = exclude.into_iter().collect();
    if let Some(u) = exclude {
        single_client(cfg, Some(u))?;
    }
    let (state, history) = run_fedavg(
        &setup.fed,
        &setup.arch,
        &cfg.federation_for(seed),
        setup.init.clone(),
        &excluded,
    )?;
    let (name, phase) = match exclude {
        Some(u) => (format!("retrained-client-{u}.ckpt"), "retrained"),
        None => ("original.ckpt".to_string(), "original"),
    };
    let out = &cfg.out_dir;
    save_checkpoint(&out.join(&name), state.global())?;
    write_csv(
        &out.join("history.csv"),
        &history_rows(seed, phase, exclude, "", &history),
    )?;
    write_json(&out.join("partition.json"), &setup.partition)?;
    let record = TrainRecord {
        config_hash: cfg.config_hash(),
        seed,
        excluded: exclude,
        rounds: history.len(),
        final_test_acc: accuracy(state.global(), &setup.arch, setup.fed.test_set())?,
        bytes_total: state.bytes_total(),
        files: vec![name, "history.csv".into(), "partition.json".into()],
    };
    write_json(&out.join("train.json"), &record)?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnRecord {
    pub config_hash: String,
    pub seed: u64,
    pub client: usize,
    pub method: String,
    pub bytes: u64,
    pub forget_examples: usize,
    pub repaired_targets: usize,
    pub files: Vec<String>,
}

/// Runs the configured method on client `u`'s shard against the model in `model`.
pub fn unlearn(cfg: &ExperimentConfig, model: &Path, u: usize) -> Result<UnlearnRecord> {
    let seed = single_seed(cfg);
    let setup = setup_seed(cfg, seed)?;
    let global = load_checkpoint(model)?;
    check_shape(&global, &setup, model)?;
    let forget = setup.fed.shard(u)?;
    let (unlearned, repaired) = match cfg.method {
        Method::Fedquit(_) => {
            let outcome = fedquit_unlearn(&global, &setup.arch, forget, &cfg.unlearn_for(seed))?;
            (outcome.model, outcome.repaired_targets)
        }
        Method::Natural => (natural_baseline(&global), 0),
    };
    let (_, bytes) = state_after_unlearning(cfg, seed, &global, unlearned.clone(), u)?;
    save_checkpoint(&cfg.out_dir.join("unlearned.ckpt"), &unlearned)?;
    let record = UnlearnRecord {
        config_hash: cfg.config_hash(),
        seed,
        client: u,
        method: cfg.method.tag(),
        bytes,
        forget_examples: forget.len(),
        repaired_targets: repaired,
        files: vec!["unlearned.ckpt".into()],
    };
    write_json(&cfg.out_dir.join("unlearn.json"), &record)?;
    Ok(record)
}

fn check_shape(
    params: &fedquit_core::nn::ParameterSet,
    setup: &crate::pipeline::SeedSetup,
    path: &Path,
) -> Result<()> {
    if params.matches(&setup.arch) {
        Ok(())
    } else {
        Err(CliError::Parse {
            path: path.to_path_buf(),
            message: format!(
                "checkpoint layers {:?} do not match the configured model {:?}",
                params.layer_sizes(),
                setup.arch.layer_sizes()
            ),
        })
    }
}

/// Where the recovery target comes from.
#[derive(Debug, Clone)]
pub enum Target {
    Accuracy(f64),
    /// Test accuracy of a retrained checkpoint.
    Retrained(PathBuf),
}

/// Resumes FedAvg without client `u` from the model in `model` (the unlearned model,
/// taken to follow `rounds` rounds of regular training).
///
/// Artifacts are written before a non-convergence error is returned.
pub fn recover_from(
    cfg: &ExperimentConfig,
    model: &Path,
    u: usize,
    target: &Target,
) -> Result<RecoverySummary> {
    let seed = single_seed(cfg);
    let setup = setup_seed(cfg, seed)?;
    let start = load_checkpoint(model)?;
    check_shape(&start, &setup, model)?;
    let target_acc = match target {
        Target::Accuracy(a) => *a,
        Target::Retrained(path) => {
            let retrained = load_checkpoint(path)?;
            check_shape(&retrained, &setup, path)?;
            accuracy(&retrained, &setup.arch, setup.fed.test_set())?
        }
    };
    if !target_acc.is_finite() {
        return Err(CliError::config("target", "must be finite"));
    }
    let fcfg = cfg.federation_for(seed);
    let mut state = FederationState::restore(start, &fcfg, cfg.num_clients, cfg.federation.rounds);
    let rec = recover(
        &mut state,
        &setup.fed,
        &setup.arch,
        &fcfg,
        &[u],
        target_acc,
        cfg.max_recovery_rounds,
    )?;
    let summary = RecoverySummary {
        rounds: rec.rounds,
        max_rounds: cfg.max_recovery_rounds,
        target_test_acc: target_acc,
        final_test_acc: rec.final_test_acc,
        bytes: rec.bytes,
    };
    let out = &cfg.out_dir;
    save_checkpoint(&out.join("recovered.ckpt"), state.global())?;
    write_csv(
        &out.join("history.csv"),
        &history_rows(seed, "recovery", Some(u), &cfg.method.tag(), &rec.history),
    )?;
    write_json(&out.join("recovery.json"), &summary)?;
    if summary.rounds.is_none() {
        return Err(CliError::NonConvergence(format!(
            "test accuracy {:.4} below target {:.4} after {} rounds",
            summary.final_test_acc, target_acc, summary.max_rounds
        )));
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub seed: u64,
    pub client: usize,
    pub model: ModelMetrics,
    pub retrained: Option<ModelMetrics>,
    pub deltas: Option<Deltas>,
}

/// Forget/retain/test accuracy and both attacks for the model in `model`, plus gaps to
/// a retrained checkpoint when one is given.
pub fn evaluate(
    cfg: &ExperimentConfig,
    model: &Path,
    u: usize,
    retrained: Option<&Path>,
) -> Result<Evaluation> {
    let seed = single_seed(cfg);
    let setup = setup_seed(cfg, seed)?;
    let (forget, retain) = forget_retain_split(&setup.fed, u)?;
    let eval = |path: &Path| -> Result<ModelMetrics> {
        let params = load_checkpoint(path)?;
        check_shape(&params, &setup, path)?;
        Ok(evaluate_model(
            &params,
            &setup.arch,
            &forget,
            &retain,
            setup.fed.test_set(),
            seed,
        )?)
    };
    let metrics = eval(model)?;
    let retrained = retrained.map(eval).transpose()?;
    let evaluation = Evaluation {
        seed,
        client: u,
        deltas: retrained.as_ref().map(|r| Deltas::between(&metrics, r)),
        model: metrics,
        retrained,
    };
    write_json(&cfg.out_dir.join("evaluation.json"), &evaluation)?;
    Ok(evaluation)
}
