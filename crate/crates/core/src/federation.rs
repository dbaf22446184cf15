//! FedAvg simulation: local training, weighted aggregation, byte accounting, the
//! single-client unlearning round and post-unlearning recovery.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FederationData};
use crate::evaluation::accuracy;
use crate::nn::{backprop, Architecture, LossKind, Optimizer, ParameterSet, ProbVector};
use crate::rng::{stream, SimRng, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub client_lr: f64,
    /// Multiplicative client learning-rate decay applied after every FedAvg round.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub server_lr: f64,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 60,
            local_epochs: 1,
            client_lr: 0.1,
            lr_decay: 0.998,
            batch_size: 32,
            server_lr: 1.0,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::domain("rounds must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::domain("local_epochs must be at least 1"));
        }
        if !(self.client_lr > 0.0 && self.client_lr.is_finite()) {
            return Err(Error::domain(format!(
                "client_lr must be positive, got {}",
                self.client_lr
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::domain(format!(
                "lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be at least 1"));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return Err(Error::domain(format!(
                "server_lr must be positive, got {}",
                self.server_lr
            )));
        }
        Ok(())
    }

    /// Client learning rate after `rounds_done` FedAvg rounds.
    pub fn client_lr_after(&self, rounds_done: usize) -> f64 {
        let mut lr = self.client_lr;
        for _ in 0..rounds_done {
            lr *= self.lr_decay;
        }
        lr
    }
}

/// Result of one client's local training.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub params: ParameterSet,
    /// Mean of the minibatch losses seen during training.
    pub mean_loss: f64,
    pub steps: usize,
}

/// `epochs` passes of shuffled minibatch SGD on hard-label cross-entropy.
pub fn local_train<R: Rng + ?Sized>(
    params: &ParameterSet,
    arch: &Architecture,
    shard: &Dataset,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<LocalUpdate> {
    if shard.is_empty() {
        return Err(Error::domain("local training on an empty shard"));
    }
    if batch_size == 0 {
        return Err(Error::domain("batch size must be at least 1"));
    }
    let targets = shard
        .examples()
        .iter()
        .map(|ex| ProbVector::one_hot(ex.label, arch.num_classes()))
        .collect::<Result<Vec<_>>>()?;
    let mut optimizer = Optimizer::sgd(lr)?;
    let mut params = params.clone();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut loss_sum = 0.0;
    let mut steps = 0;
    for _ in 0..epochs {
        // Every epoch is a fresh permutation, so E epochs in one call match E calls.
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<(&[f64], &ProbVector)> = chunk
                .iter()
                .map(|&i| (shard.examples()[i].features.as_slice(), &targets[i]))
                .collect();
            let (grads, loss) = backprop(&params, arch, &batch, LossKind::CrossEntropyHard, 1.0)?;
            optimizer.step(&mut params, &grads)?;
            loss_sum += loss;
            steps += 1;
        }
    }
    Ok(LocalUpdate {
        params,
        mean_loss: if steps > 0 {
            loss_sum / steps as f64
        } else {
            0.0
        },
        steps,
    })
}

/// Coordinate-wise mean weighted by `n_k / Σ n`.
///
/// Each coordinate's weighted terms are summed in sorted order, so the result does not
/// depend on the order of `updates`; coordinates on which every client agrees are
/// copied through unchanged.
pub fn aggregate(updates: &[(&ParameterSet, usize)]) -> Result<ParameterSet> {
    let Some(&(first, _)) = updates.first() else {
        return Err(Error::domain("aggregation needs at least one update"));
    };
    for (p, _) in updates {
        first.check_shape(p)?;
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::domain("all clients report zero examples"));
    }
    let weights: Vec<f64> = updates
        .iter()
        .map(|(_, n)| *n as f64 / total as f64)
        .collect();
    let mut out = first.clone();
    let mut terms = Vec::with_capacity(updates.len());
    for (i, slot) in out.values_mut().iter_mut().enumerate() {
        let bits = first.values()[i].to_bits();
        if updates.iter().all(|(p, _)| p.values()[i].to_bits() == bits) {
            continue;
        }
        terms.clear();
        terms.extend(
            updates
                .iter()
                .zip(&weights)
                .map(|((p, _), w)| w * p.values()[i]),
        );
        terms.sort_by(f64::total_cmp);
        *slot = terms.iter().sum();
    }
    Ok(out)
}

/// Per-round bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub participants: Vec<usize>,
    /// Mean local training loss of each participant, in `participants` order.
    pub client_losses: Vec<f64>,
    pub test_accuracy: f64,
    pub bytes: u64,
}

impl RoundReport {
    pub fn mean_client_loss(&self) -> f64 {
        if self.client_losses.is_empty() {
            return 0.0;
        }
        self.client_losses.iter().sum::<f64>() / self.client_losses.len() as f64
    }
}

/// Server-side state of a running federation.
#[derive(Debug, Clone)]
pub struct FederationState {
    global: ParameterSet,
    round: usize,
    fedavg_rounds: usize,
    client_lr: f64,
    client_rngs: Vec<SimRng>,
    bytes_up: u64,
    bytes_down: u64,
}

impl FederationState {
    /// Fresh federation at round 0 with per-client training streams.
    pub fn new(init: ParameterSet, cfg: &FederationConfig, num_clients: usize) -> Self {
        Self {
            global: init,
            round: 0,
            fedavg_rounds: 0,
            client_lr: cfg.client_lr,
            client_rngs: client_streams(cfg.seed, num_clients, Stream::ClientTrain),
            bytes_up: 0,
            bytes_down: 0,
        }
    }

    /// Rebuilds the state of a full-participation run after `rounds_done` FedAvg rounds,
    /// e.g. from a saved checkpoint of its global model.
    pub fn restore(
        global: ParameterSet,
        cfg: &FederationConfig,
        num_clients: usize,
        rounds_done: usize,
    ) -> Self {
        let per_round = 2 * num_clients as u64 * global.serialized_len();
        let bytes = rounds_done as u64 * per_round / 2;
        Self {
            client_lr: cfg.client_lr_after(rounds_done),
            round: rounds_done,
            fedavg_rounds: rounds_done,
            client_rngs: client_streams(cfg.seed, num_clients, Stream::ClientTrain),
            bytes_up: bytes,
            bytes_down: bytes,
            global,
        }
    }

    pub fn global(&self) -> &ParameterSet {
        &self.global
    }

    pub fn into_global(self) -> ParameterSet {
        self.global
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn client_lr(&self) -> f64 {
        self.client_lr
    }

    pub fn num_clients(&self) -> usize {
        self.client_rngs.len()
    }

    pub fn bytes_up(&self) -> u64 {
        self.bytes_up
    }

    pub fn bytes_down(&self) -> u64 {
        self.bytes_down
    }

    pub fn bytes_total(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }

    fn check_exclusion(&self, exclude: &[usize]) -> Result<Vec<usize>> {
        if let Some(&bad) = exclude.iter().find(|&&u| u >= self.num_clients()) {
            return Err(Error::domain(format!(
                "excluded client {bad} out of range for {} clients",
                self.num_clients()
            )));
        }
        let participants: Vec<usize> = (0..self.num_clients())
            .filter(|k| !exclude.contains(k))
            .collect();
        if participants.is_empty() {
            return Err(Error::domain("every client is excluded"));
        }
        Ok(participants)
    }

    /// One FedAvg round: broadcast, local training, weighted aggregation, server update.
    ///
    /// Excluded clients' shards are never read.
    pub fn run_round(
        &mut self,
        fed: &FederationData,
        arch: &Architecture,
        cfg: &FederationConfig,
        exclude: &[usize],
    ) -> Result<RoundReport> {
        if fed.num_clients() != self.num_clients() {
            return Err(Error::shape(format!(
                "state tracks {} clients, data has {}",
                self.num_clients(),
                fed.num_clients()
            )));
        }
        let participants = self.check_exclusion(exclude)?;
        let global = &self.global;
        let lr = self.client_lr;
        let updates: Vec<Option<Result<(LocalUpdate, usize)>>> = self
            .client_rngs
            .par_iter_mut()
            .enumerate()
            .map(|(k, rng)| {
                if exclude.contains(&k) {
                    return None;
                }
                Some(fed.shard(k).and_then(|shard| {
                    local_train(
                        global,
                        arch,
                        shard,
                        cfg.local_epochs,
                        lr,
                        cfg.batch_size,
                        rng,
                    )
                    .map(|u| (u, shard.len()))
                }))
            })
            .collect();
        let updates: Vec<(LocalUpdate, usize)> =
            updates.into_iter().flatten().collect::<Result<_>>()?;

        let averaged = aggregate(
            &updates
                .iter()
                .map(|(u, n)| (&u.params, *n))
                .collect::<Vec<_>>(),
        )?;
        if cfg.server_lr == 1.0 {
            self.global = averaged;
        } else {
            for (w, a) in self.global.values_mut().iter_mut().zip(averaged.values()) {
                *w += cfg.server_lr * (a - *w);
            }
        }

        let size = self.global.serialized_len();
        let transfer = participants.len() as u64 * size;
        self.bytes_down += transfer;
        self.bytes_up += transfer;
        self.round += 1;
        self.fedavg_rounds += 1;
        self.client_lr *= cfg.lr_decay;

        Ok(RoundReport {
            round: self.round,
            participants,
            client_losses: updates.iter().map(|(u, _)| u.mean_loss).collect(),
            test_accuracy: accuracy(&self.global, arch, fed.test_set())?,
            bytes: 2 * transfer,
        })
    }

    /// The special round in which only client `u` takes part: the server broadcasts the
    /// current model to `u` and installs the model `u` sends back.
    ///
    /// Returns the bytes exchanged, one download plus one upload.
    pub fn unlearning_round(&mut self, unlearned: ParameterSet, u: usize) -> Result<u64> {
        if u >= self.num_clients() {
            return Err(Error::domain(format!(
                "client {u} out of range for {} clients",
                self.num_clients()
            )));
        }
        self.global.check_shape(&unlearned)?;
        let size = self.global.serialized_len();
        self.bytes_down += size;
        self.bytes_up += size;
        self.global = unlearned;
        self.round += 1;
        Ok(2 * size)
    }

    /// Installs a model without any communication (the natural baseline's "unlearning").
    pub fn replace_global(&mut self, params: ParameterSet) -> Result<()> {
        self.global.check_shape(&params)?;
        self.global = params;
        Ok(())
    }

    fn switch_to_recovery_streams(&mut self, seed: u64) {
        self.client_rngs = client_streams(seed, self.num_clients(), Stream::ClientRecover);
    }
}

fn client_streams(seed: u64, n: usize, which: fn(u32) -> Stream) -> Vec<SimRng> {
    (0..n).map(|k| stream(seed, which(k as u32))).collect()
}

/// `cfg.rounds` FedAvg rounds from `init`, skipping the clients in `exclude`.
pub fn run_fedavg(
    fed: &FederationData,
    arch: &Architecture,
    cfg: &FederationConfig,
    init: ParameterSet,
    exclude: &[usize],
) -> Result<(FederationState, Vec<RoundReport>)> {
    cfg.validate()?;
    if !init.matches(arch) {
        return Err(Error::shape(
            "initial parameters do not match the architecture",
        ));
    }
    let mut state = FederationState::new(init, cfg, fed.num_clients());
    state.check_exclusion(exclude)?;
    let mut history = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        history.push(state.run_round(fed, arch, cfg, exclude)?);
    }
    Ok((state, history))
}

#[derive(Debug, Clone)]
pub struct Recovery {
    /// Smallest number of rounds after which test accuracy reached the target.
    pub rounds: Option<usize>,
    pub history: Vec<RoundReport>,
    pub final_test_acc: f64,
    pub bytes: u64,
}

/// Resumes FedAvg (without `exclude`) until test accuracy reaches `target_test_acc`.
///
/// Round 0 is the model as handed over; clients draw from their recovery streams so the
/// outcome does not depend on how the state was produced.
#[allow(clippy::too_many_arguments)]
pub fn recover(
    state: &mut FederationState,
    fed: &FederationData,
    arch: &Architecture,
    cfg: &FederationConfig,
    exclude: &[usize],
    target_test_acc: f64,
    max_rounds: usize,
) -> Result<Recovery> {
    if !target_test_acc.is_finite() {
        return Err(Error::domain("recovery target must be finite"));
    }
    if max_rounds == 0 {
        return Err(Error::domain("max_rounds must be at least 1"));
    }
    cfg.validate()?;
    state.check_exclusion(exclude)?;
    state.switch_to_recovery_streams(cfg.seed);
    let start_bytes = state.bytes_total();
    let mut acc = accuracy(state.global(), arch, fed.test_set())?;
    let mut history = Vec::new();
    let mut rounds = (acc >= target_test_acc).then_some(0);
    while rounds.is_none() && history.len() < max_rounds {
        let report = state.run_round(fed, arch, cfg, exclude)?;
        acc = report.test_accuracy;
        history.push(report);
        if acc >= target_test_acc {
            rounds = Some(history.len());
        }
    }
    Ok(Recovery {
        rounds,
        history,
        final_test_acc: acc,
        bytes: state.bytes_total() - start_bytes,
    })
}
