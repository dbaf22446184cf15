//! Accuracy, membership-inference attacks and per-run metric reports.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::nn::{
    argmax, cross_entropy_raw, forward, softmax_unchecked, Architecture, ParameterSet,
};
use crate::rng::{stream, Stream};
use crate::{Error, Result};

fn require_nonempty(data: &Dataset, what: &str) -> Result<()> {
    if data.is_empty() {
        Err(Error::domain(format!("{what} is empty")))
    } else {
        Ok(())
    }
}

/// Fraction of examples whose argmax logit equals the label (ties to the lowest class).
pub fn accuracy(params: &ParameterSet, arch: &Architecture, data: &Dataset) -> Result<f64> {
    require_nonempty(data, "accuracy dataset")?;
    let mut correct = 0usize;
    for ex in data.examples() {
        if argmax(&forward(params, arch, &ex.features)?) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Top-1 softmax confidence (τ = 1) of every example, in dataset order.
pub fn confidences(params: &ParameterSet, arch: &Architecture, data: &Dataset) -> Result<Vec<f64>> {
    data.examples()
        .iter()
        .map(|ex| {
            let p = softmax_unchecked(&forward(params, arch, &ex.features)?, 1.0);
            Ok(p.into_iter().fold(0.0, f64::max))
        })
        .collect()
}

/// Per-example hard-label cross-entropy (τ = 1), in dataset order.
pub fn per_example_losses(
    params: &ParameterSet,
    arch: &Architecture,
    data: &Dataset,
) -> Result<Vec<f64>> {
    let classes = arch.num_classes();
    data.examples()
        .iter()
        .map(|ex| {
            if ex.label >= classes {
                return Err(Error::shape(format!(
                    "label {} outside the network's {classes} classes",
                    ex.label
                )));
            }
            let p = softmax_unchecked(&forward(params, arch, &ex.features)?, 1.0);
            let mut q = vec![0.0; classes];
            q[ex.label] = 1.0;
            Ok(cross_entropy_raw(&q, &p))
        })
        .collect()
}

/// Mean per-example cross-entropy over `retain`, summed in dataset order.
pub fn avg_train_loss(params: &ParameterSet, arch: &Architecture, retain: &Dataset) -> Result<f64> {
    require_nonempty(retain, "retain dataset")?;
    let losses = per_example_losses(params, arch, retain)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiaKind {
    /// Member iff top-1 confidence ≥ threshold.
    ConfidenceThreshold,
    /// Member iff per-example loss < threshold.
    LossThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaPredictor {
    pub kind: MiaKind,
    pub threshold: f64,
    /// Sizes of the member / non-member splits the threshold was fitted on.
    pub seen: usize,
    pub unseen: usize,
    /// Balanced accuracy on the fitting splits (confidence attack only).
    pub fit_balanced_accuracy: Option<f64>,
}

impl MiaPredictor {
    pub fn is_member_score(&self, score: f64) -> bool {
        match self.kind {
            MiaKind::ConfidenceThreshold => score >= self.threshold,
            MiaKind::LossThreshold => score < self.threshold,
        }
    }
}

/// Threshold maximising balanced accuracy when `score ≥ threshold` predicts membership.
///
/// Candidates are `0` and every observed score; ties keep the lowest threshold.
/// Returns `(threshold, balanced_accuracy)`.
pub fn best_confidence_threshold(members: &[f64], non_members: &[f64]) -> (f64, f64) {
    let mut candidates: Vec<f64> = members.iter().chain(non_members).copied().collect();
    candidates.push(0.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut sorted_m = members.to_vec();
    let mut sorted_n = non_members.to_vec();
    sorted_m.sort_by(f64::total_cmp);
    sorted_n.sort_by(f64::total_cmp);

    let (mut best_t, mut best_ba) = (candidates[0], f64::NEG_INFINITY);
    for &t in &candidates {
        // Members at or above t are true positives; non-members below t are true negatives.
        let tp = sorted_m.len() - sorted_m.partition_point(|&c| c < t);
        let tn = sorted_n.partition_point(|&c| c < t);
        let ba = 0.5 * (tp as f64 / sorted_m.len() as f64 + tn as f64 / sorted_n.len() as f64);
        if ba > best_ba {
            best_ba = ba;
            best_t = t;
        }
    }
    (best_t, best_ba)
}

/// Confidence-threshold attack fitted on a balanced seen/unseen sample.
///
/// The larger split is subsampled (seeded) to the size of the smaller one.
pub fn fit_mia_song(
    params: &ParameterSet,
    arch: &Architecture,
    seen: &Dataset,
    unseen: &Dataset,
    seed: u64,
) -> Result<MiaPredictor> {
    require_nonempty(seen, "MIA seen split")?;
    require_nonempty(unseen, "MIA unseen split")?;
    let mut members = confidences(params, arch, seen)?;
    let mut non_members = confidences(params, arch, unseen)?;
    let n = members.len().min(non_members.len());
    let mut rng = stream(seed, Stream::Mia);
    if members.len() > n {
        members.shuffle(&mut rng);
        members.truncate(n);
    }
    if non_members.len() > n {
        non_members.shuffle(&mut rng);
        non_members.truncate(n);
    }
    let (threshold, ba) = best_confidence_threshold(&members, &non_members);
    Ok(MiaPredictor {
        kind: MiaKind::ConfidenceThreshold,
        threshold,
        seen: n,
        unseen: n,
        fit_balanced_accuracy: Some(ba),
    })
}

/// Loss-threshold attack whose threshold is the model's mean loss on `retain`.
pub fn fit_mia_yeom(
    params: &ParameterSet,
    arch: &Architecture,
    retain: &Dataset,
) -> Result<MiaPredictor> {
    Ok(MiaPredictor {
        kind: MiaKind::LossThreshold,
        threshold: avg_train_loss(params, arch, retain)?,
        seen: retain.len(),
        unseen: 0,
        fit_balanced_accuracy: None,
    })
}

/// Fraction of `target` the predictor labels as training members.
pub fn mia_rate(
    predictor: &MiaPredictor,
    params: &ParameterSet,
    arch: &Architecture,
    target: &Dataset,
) -> Result<f64> {
    require_nonempty(target, "MIA target set")?;
    let scores = match predictor.kind {
        MiaKind::ConfidenceThreshold => confidences(params, arch, target)?,
        MiaKind::LossThreshold => per_example_losses(params, arch, target)?,
    };
    Ok(rate_from_scores(predictor, &scores))
}

pub fn rate_from_scores(predictor: &MiaPredictor, scores: &[f64]) -> f64 {
    let hits = scores
        .iter()
        .filter(|&&s| predictor.is_member_score(s))
        .count();
    hits as f64 / scores.len() as f64
}

/// Forgetting metrics of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub test_acc: f64,
    pub forget_acc: f64,
    pub retain_acc: f64,
    pub mia_song_rate: f64,
    pub mia_yeom_rate: f64,
    pub mia_song_fit_accuracy: f64,
}

/// Evaluates a model against the forget, retain and test sets.
///
/// Both attacks are refitted for the model under evaluation: the confidence attack on
/// retain (members) versus test (non-members), the loss attack on the retain mean loss.
/// The forget set is only ever the attack target.
pub fn evaluate_model(
    params: &ParameterSet,
    arch: &Architecture,
    forget: &Dataset,
    retain: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<ModelMetrics> {
    let song = fit_mia_song(params, arch, retain, test, seed)?;
    let yeom = fit_mia_yeom(params, arch, retain)?;
    Ok(ModelMetrics {
        test_acc: accuracy(params, arch, test)?,
        forget_acc: accuracy(params, arch, forget)?,
        retain_acc: accuracy(params, arch, retain)?,
        mia_song_rate: mia_rate(&song, params, arch, forget)?,
        mia_yeom_rate: mia_rate(&yeom, params, arch, forget)?,
        mia_song_fit_accuracy: song.fit_balanced_accuracy.unwrap_or(0.5),
    })
}

/// Absolute gaps to the retrained model for each forgetting metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub forget_acc: f64,
    pub mia_song: f64,
    pub mia_yeom: f64,
}

impl Deltas {
    pub fn between(model: &ModelMetrics, retrained: &ModelMetrics) -> Self {
        Self {
            forget_acc: (model.forget_acc - retrained.forget_acc).abs(),
            mia_song: (model.mia_song_rate - retrained.mia_song_rate).abs(),
            mia_yeom: (model.mia_yeom_rate - retrained.mia_yeom_rate).abs(),
        }
    }
}

/// Outcome of resuming FedAvg after unlearning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    /// Rounds needed to reach the target; `None` when the budget ran out.
    pub rounds: Option<usize>,
    pub max_rounds: usize,
    pub target_test_acc: f64,
    pub final_test_acc: f64,
    pub bytes: u64,
}

/// Communication efficiency: retraining rounds over recovery rounds (at least 1).
pub fn communication_efficiency(retrain_rounds: usize, recovery_rounds: usize) -> f64 {
    retrain_rounds as f64 / recovery_rounds.max(1) as f64
}

/// Metrics for one (seed, unlearning client, method) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub seed: u64,
    pub client: usize,
    /// The unlearned model, measured right after the unlearning step.
    pub unlearned: ModelMetrics,
    pub retrained: ModelMetrics,
    pub original: ModelMetrics,
    pub deltas: Deltas,
    pub recovery_rounds: Option<usize>,
    pub converged: bool,
    pub retrain_rounds: usize,
    pub ce: Option<f64>,
    pub recovered_test_acc: f64,
    pub unlearning_bytes: u64,
    pub recovery_bytes: u64,
    pub bytes_total: u64,
}

impl MetricsReport {
    pub fn test_acc(&self) -> f64 {
        self.unlearned.test_acc
    }

    pub fn forget_acc(&self) -> f64 {
        self.unlearned.forget_acc
    }

    pub fn mia_song_rate(&self) -> f64 {
        self.unlearned.mia_song_rate
    }

    pub fn mia_yeom_rate(&self) -> f64 {
        self.unlearned.mia_yeom_rate
    }
}

/// Identifies the run a report belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunId {
    pub method: String,
    pub seed: u64,
    pub client: usize,
}

/// Assembles a report from already-computed model metrics and recovery outcome.
///
/// CE is omitted when recovery did not converge.
pub fn report(
    id: RunId,
    unlearned: ModelMetrics,
    retrained: ModelMetrics,
    original: ModelMetrics,
    recovery: &RecoverySummary,
    retrain_rounds: usize,
    unlearning_bytes: u64,
) -> MetricsReport {
    let converged = recovery.rounds.is_some();
    MetricsReport {
        method: id.method,
        seed: id.seed,
        client: id.client,
        deltas: Deltas::between(&unlearned, &retrained),
        unlearned,
        retrained,
        original,
        recovery_rounds: recovery.rounds,
        converged,
        retrain_rounds,
        ce: recovery
            .rounds
            .map(|r| communication_efficiency(retrain_rounds, r)),
        recovered_test_acc: recovery.final_test_acc,
        unlearning_bytes,
        recovery_bytes: recovery.bytes,
        bytes_total: unlearning_bytes + recovery.bytes,
    }
}
