//! Datasets, synthetic data, CSV ingestion and client partitioning.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// An ordered collection of examples sharing a feature dimension and class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(
        examples: Vec<LabeledExample>,
        num_classes: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::domain(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if feature_dim == 0 {
            return Err(Error::domain("feature dimension must be at least 1"));
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.features.len() != feature_dim {
                return Err(Error::shape(format!(
                    "example {i} has {} features, expected {feature_dim}",
                    ex.features.len()
                )));
            }
            if ex.label >= num_classes {
                return Err(Error::domain(format!(
                    "example {i} has label {} but only {num_classes} classes",
                    ex.label
                )));
            }
            if ex.features.iter().any(|f| !f.is_finite()) {
                return Err(Error::domain(format!(
                    "example {i} has a non-finite feature"
                )));
            }
        }
        Ok(Self {
            examples,
            num_classes,
            feature_dim,
        })
    }

    /// An empty dataset with the given shape, used as a starting point for shards.
    pub fn empty(num_classes: usize, feature_dim: usize) -> Result<Self> {
        Self::new(Vec::new(), num_classes, feature_dim)
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.num_classes];
        for ex in &self.examples {
            hist[ex.label] += 1;
        }
        hist
    }

    /// Shannon entropy (nats) of the label distribution.
    pub fn label_entropy(&self) -> f64 {
        let n = self.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        self.label_histogram()
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }

    /// Concatenation in argument order.
    pub fn concat<'a>(
        parts: impl IntoIterator<Item = &'a Dataset>,
        num_classes: usize,
        feature_dim: usize,
    ) -> Result<Dataset> {
        let mut examples = Vec::new();
        for part in parts {
            if part.num_classes != num_classes || part.feature_dim != feature_dim {
                return Err(Error::shape(
                    "cannot concatenate datasets of different shapes",
                ));
            }
            examples.extend_from_slice(&part.examples);
        }
        Dataset::new(examples, num_classes, feature_dim)
    }

    fn push(&mut self, ex: LabeledExample) {
        self.examples.push(ex);
    }
}

/// `C` Gaussian clusters with isotropic standard deviation `spread`.
///
/// Class means sit on the unit sphere: evenly spaced on the circle spanned by the first
/// two coordinates when `d ≥ 2`, and evenly spaced in `[−1, 1]` when `d = 1`. Examples
/// are emitted class by class.
pub fn generate_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    generate_blobs_from(
        num_classes,
        per_class,
        dim,
        spread,
        &mut stream(seed, Stream::TrainData),
    )
}

/// Same generator as [`generate_blobs`], drawing from a caller-supplied stream.
pub fn generate_blobs_from<R: Rng + ?Sized>(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if num_classes < 2 || per_class == 0 || dim == 0 {
        return Err(Error::domain(format!(
            "blobs need C >= 2, per_class >= 1, d >= 1; got C={num_classes}, per_class={per_class}, d={dim}"
        )));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::domain(format!(
            "spread must be positive, got {spread}"
        )));
    }
    let noise = Normal::new(0.0, spread).map_err(|e| Error::domain(e.to_string()))?;
    let means = blob_means(num_classes, dim);
    let mut examples = Vec::with_capacity(num_classes * per_class);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let features = mean.iter().map(|m| m + noise.sample(rng)).collect();
            examples.push(LabeledExample { features, label });
        }
    }
    Dataset::new(examples, num_classes, dim)
}

pub fn blob_means(num_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|c| {
            let mut mean = vec![0.0; dim];
            if dim == 1 {
                mean[0] = -1.0 + 2.0 * c as f64 / (num_classes - 1) as f64;
            } else {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
                mean[0] = angle.cos();
                mean[1] = angle.sin();
            }
            mean
        })
        .collect()
}

/// Reads rows of `label,f1,...,fd` (no header).
///
/// The class count is `max label + 1` unless `num_classes` is given, in which case
/// every label must be below it.
pub fn load_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, num_classes)
}

pub fn read_csv<R: std::io::Read>(input: R, num_classes: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut examples = Vec::new();
    let mut dim = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(Error::Parse {
                row,
                message: "expected a label and at least one feature".into(),
            });
        }
        let d = record.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Parse {
                    row,
                    message: format!("ragged row: {d} features, previous rows have {expected}"),
                })
            }
            Some(_) => {}
        }
        let label: usize = record[0].parse().map_err(|_| Error::Parse {
            row,
            message: format!("label {:?} is not a non-negative integer", &record[0]),
        })?;
        if let Some(c) = num_classes {
            if label >= c {
                return Err(Error::Parse {
                    row,
                    message: format!("label {label} not below declared class count {c}"),
                });
            }
        }
        let features = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    message: format!("feature {} ({cell:?}) is not a finite number", j + 1),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        examples.push(LabeledExample { features, label });
    }
    let Some(dim) = dim else {
        return Err(Error::Parse {
            row: 1,
            message: "no data rows".into(),
        });
    };
    let inferred = examples.iter().map(|e| e.label).max().unwrap_or(0) + 1;
    let classes = num_classes.unwrap_or(inferred);
    if classes < 2 {
        return Err(Error::Parse {
            row: 1,
            message: "only one class present; declare the class count explicitly".into(),
        });
    }
    Dataset::new(examples, classes, dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PartitionKind {
    Iid,
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub num_clients: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 2 {
            return Err(Error::domain(format!(
                "need at least 2 clients, got {}",
                self.num_clients
            )));
        }
        if let PartitionKind::Dirichlet { alpha } = self.kind {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::domain(format!(
                    "alpha must be positive, got {alpha}"
                )));
            }
        }
        Ok(())
    }
}

/// Splits `data` into `K` disjoint, nonempty shards.
///
/// IID: seeded shuffle, then round-robin, so the first `n mod K` clients get one extra
/// example. Dirichlet: for every class a proportion vector over clients is drawn from
/// `Dir(α)` and each example of that class is assigned to a client sampled from it.
/// Empty shards are then filled by moving a random example out of the largest shard.
pub fn partition(data: &Dataset, spec: &PartitionSpec) -> Result<Vec<Dataset>> {
    spec.validate()?;
    let k = spec.num_clients;
    if data.len() < k {
        return Err(Error::domain(format!(
            "cannot split {} examples over {k} clients",
            data.len()
        )));
    }
    let mut rng = stream(spec.seed, Stream::Partition);
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); k];

    match spec.kind {
        PartitionKind::Iid => {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng);
            for (pos, idx) in order.into_iter().enumerate() {
                owners[pos % k].push(idx);
            }
        }
        PartitionKind::Dirichlet { alpha } => {
            let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::domain(e.to_string()))?;
            for class in 0..data.num_classes() {
                let mut members: Vec<usize> = data
                    .examples()
                    .iter()
                    .enumerate()
                    .filter(|(_, ex)| ex.label == class)
                    .map(|(i, _)| i)
                    .collect();
                let proportions = dirichlet_draw(&gamma, k, &mut rng);
                members.shuffle(&mut rng);
                for idx in members {
                    owners[sample_categorical(&proportions, &mut rng)].push(idx);
                }
            }
        }
    }

    repair_empty(&mut owners, &mut rng);

    owners
        .into_iter()
        .map(|idxs| {
            let mut shard = Dataset::empty(data.num_classes(), data.feature_dim())?;
            for i in idxs {
                shard.push(data.examples[i].clone());
            }
            Ok(shard)
        })
        .collect()
}

fn dirichlet_draw<R: Rng + ?Sized>(gamma: &Gamma<f64>, k: usize, rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        // Every gamma draw underflowed (tiny α): all mass on one client.
        let winner = rng.random_range(0..k);
        draws = vec![0.0; k];
        draws[winner] = 1.0;
    }
    draws
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the cumulative sum: fall back to the last client with mass.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

fn repair_empty<R: Rng + ?Sized>(owners: &mut [Vec<usize>], rng: &mut R) {
    while let Some(empty) = owners.iter().position(|o| o.is_empty()) {
        let mut largest = 0;
        for (i, o) in owners.iter().enumerate() {
            if o.len() > owners[largest].len() {
                largest = i;
            }
        }
        let pick = rng.random_range(0..owners[largest].len());
        let moved = owners[largest].swap_remove(pick);
        owners[empty].push(moved);
    }
}

/// Client shards plus the held-out global test set.
///
/// Shard reads go through [`FederationData::shard`], which counts accesses so tests
/// can assert that excluded clients are never touched.
#[derive(Debug)]
pub struct FederationData {
    shards: Vec<Dataset>,
    test: Dataset,
    access: Vec<AtomicU64>,
}

impl Clone for FederationData {
    fn clone(&self) -> Self {
        Self {
            shards: self.shards.clone(),
            test: self.test.clone(),
            access: self.access.iter().map(|_| AtomicU64::new(0)).collect(),
        }
    }
}

impl FederationData {
    pub fn new(shards: Vec<Dataset>, test: Dataset) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::domain("a federation needs at least one client"));
        }
        let (c, d) = (test.num_classes(), test.feature_dim());
        for (k, shard) in shards.iter().enumerate() {
            if shard.is_empty() {
                return Err(Error::domain(format!("client {k} has an empty shard")));
            }
            if shard.num_classes() != c || shard.feature_dim() != d {
                return Err(Error::shape(format!(
                    "client {k} shard shape differs from the test set"
                )));
            }
        }
        let access = shards.iter().map(|_| AtomicU64::new(0)).collect();
        Ok(Self {
            shards,
            test,
            access,
        })
    }

    /// Partitions `train` and pairs the shards with `test`.
    pub fn from_partition(train: &Dataset, test: Dataset, spec: &PartitionSpec) -> Result<Self> {
        Self::new(partition(train, spec)?, test)
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    /// Reads client `k`'s shard and records the access.
    pub fn shard(&self, k: usize) -> Result<&Dataset> {
        let shard = self.shards.get(k).ok_or_else(|| {
            Error::domain(format!(
                "client {k} out of range for {} clients",
                self.shards.len()
            ))
        })?;
        self.access[k].fetch_add(1, Ordering::Relaxed);
        Ok(shard)
    }

    /// Shard sizes `n_k`; does not count as a data access.
    pub fn shard_sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Dataset::len).collect()
    }

    pub fn label_histograms(&self) -> Vec<Vec<usize>> {
        self.shards.iter().map(Dataset::label_histogram).collect()
    }

    pub fn total_examples(&self) -> usize {
        self.shards.iter().map(Dataset::len).sum()
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn num_classes(&self) -> usize {
        self.test.num_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.test.feature_dim()
    }

    pub fn access_count(&self, k: usize) -> u64 {
        self.access[k].load(Ordering::Relaxed)
    }

    pub fn reset_access_counts(&self) {
        self.access
            .iter()
            .for_each(|a| a.store(0, Ordering::Relaxed));
    }
}

/// The unlearning client's shard and the concatenation of all other shards.
pub fn forget_retain_split(fed: &FederationData, u: usize) -> Result<(Dataset, Dataset)> {
    if u >= fed.num_clients() {
        return Err(Error::domain(format!(
            "client {u} out of range for {} clients",
            fed.num_clients()
        )));
    }
    let forget = fed.shard(u)?.clone();
    let others = (0..fed.num_clients())
        .filter(|&k| k != u)
        .map(|k| fed.shard(k))
        .collect::<Result<Vec<_>>>()?;
    let retain = Dataset::concat(others, fed.num_classes(), fed.feature_dim())?;
    Ok((forget, retain))
}

/// Per-partition record written next to run artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub spec: PartitionSpec,
    pub shard_sizes: Vec<usize>,
    pub label_histograms: Vec<Vec<usize>>,
}

impl PartitionManifest {
    pub fn new(spec: PartitionSpec, fed: &FederationData) -> Self {
        Self {
            spec,
            shard_sizes: fed.shard_sizes(),
            label_histograms: fed.label_histograms(),
        }
    }
}
