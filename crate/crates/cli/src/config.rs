//! Experiment configuration.
//!
//! The file is TOML with the sections `dataset`, `partition`, `model`, `federation`,
//! `unlearning` and `experiment`; a `.json` file with the same structure is accepted
//! as well. Unknown keys are rejected. A minimal file:
//!
//! ```toml
//! [dataset]
//! kind = "blobs"
//!
//! [partition]
//! kind = "dirichlet"
//! alpha = 0.3
//! num_clients = 5
//!
//! [federation]
//! rounds = 60
//!
//! [experiment]
//! unlearn_client = "each"
//! seeds = [0]
//! ```

use std::path::{Path, PathBuf};

use fedquit_core::data::PartitionKind;
use fedquit_core::federation::FederationConfig;
use fedquit_core::nn::{Activation, Architecture, OptimizerKind};
use fedquit_core::unlearning::{TeacherVariant, UnlearnConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub dataset: DatasetSection,
    pub partition: PartitionSection,
    #[serde(default)]
    pub model: ModelSection,
    pub federation: FederationSection,
    #[serde(default)]
    pub unlearning: UnlearningSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

fn default_per_class() -> usize {
    300
}
fn default_dim() -> usize {
    2
}
fn default_spread() -> f64 {
    1.1
}
fn default_test_per_class() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKindName {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub kind: PartitionKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub num_clients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![16]
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            activation: Activation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    pub rounds: usize,
    #[serde(default = "one")]
    pub local_epochs: usize,
    #[serde(default = "default_client_lr")]
    pub client_lr: f64,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_server_lr")]
    pub server_lr: f64,
    /// Defaults to twice `rounds`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_recovery_rounds: Option<usize>,
}

fn one() -> usize {
    1
}
fn default_client_lr() -> f64 {
    0.1
}
fn default_lr_decay() -> f64 {
    0.998
}
fn default_batch() -> usize {
    32
}
fn default_server_lr() -> f64 {
    1.0
}

/// Unlearning method names accepted on the command line and in the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    FedquitLogits,
    FedquitSoftmax,
    Incompetent,
    Natural,
}

impl std::str::FromStr for MethodName {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedquit-logits" => Ok(MethodName::FedquitLogits),
            "fedquit-softmax" => Ok(MethodName::FedquitSoftmax),
            "incompetent" => Ok(MethodName::Incompetent),
            "natural" => Ok(MethodName::Natural),
            other => Err(CliError::config(
                "method",
                format!(
                    "unknown method `{other}` (expected fedquit-logits, fedquit-softmax, incompetent or natural)"
                ),
            )),
        }
    }
}

/// Penalty value `v`: a real number or the keyword `min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PenaltyValue {
    Number(f64),
    Keyword(String),
}

impl std::str::FromStr for PenaltyValue {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "min" {
            return Ok(PenaltyValue::Keyword(s.to_string()));
        }
        s.parse::<f64>().map(PenaltyValue::Number).map_err(|_| {
            CliError::config("v", format!("expected a real number or `min`, got `{s}`"))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlearningSection {
    #[serde(default = "default_method")]
    pub method: MethodName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<PenaltyValue>,
    #[serde(default = "one")]
    pub epochs: usize,
    #[serde(default = "default_unlearn_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_method() -> MethodName {
    MethodName::FedquitLogits
}
fn default_unlearn_lr() -> f64 {
    1e-3
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_temperature() -> f64 {
    1.0
}

impl Default for UnlearningSection {
    fn default() -> Self {
        Self {
            method: default_method(),
            v: None,
            epochs: 1,
            lr: default_unlearn_lr(),
            batch_size: default_batch(),
            optimizer: default_optimizer(),
            temperature: default_temperature(),
        }
    }
}

/// Designated unlearning client: an index or `"each"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClientField {
    Index(usize),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub unlearn_client: ClientField,
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub method: Option<MethodName>,
    pub v: Option<PenaltyValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Blobs {
        num_classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        test_per_class: usize,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        num_classes: Option<usize>,
    },
}

/// What happens in the special round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Fedquit(TeacherVariant),
    /// No unlearning step; the client simply stops participating.
    Natural,
}

impl Method {
    pub fn tag(&self) -> String {
        match self {
            Method::Fedquit(variant) => variant.tag(),
            Method::Natural => "natural".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientSelection {
    One(usize),
    Each,
}

/// Validated experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub file: ConfigFile,
    pub dataset: DatasetSource,
    pub partition: PartitionKind,
    pub num_clients: usize,
    pub arch: Architecture,
    /// Federation settings; `seed` is replaced by each run's seed.
    pub federation: FederationConfig,
    pub max_recovery_rounds: usize,
    pub method: Method,
    /// Unlearning settings; `seed` is replaced by each run's seed.
    pub unlearn: UnlearnConfig,
    pub clients: ClientSelection,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn designated_clients(&self) -> Vec<usize> {
        match self.clients {
            ClientSelection::One(u) => vec![u],
            ClientSelection::Each => (0..self.num_clients).collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes()
    }

    pub fn federation_for(&self, seed: u64) -> FederationConfig {
        FederationConfig {
            seed,
            ..self.federation
        }
    }

    pub fn unlearn_for(&self, seed: u64) -> UnlearnConfig {
        UnlearnConfig {
            seed,
            ..self.unlearn
        }
    }

    /// SHA-256 of the canonical JSON form of the configuration, output directory aside.
    pub fn config_hash(&self) -> String {
        let mut file = self.file.clone();
        file.experiment.out_dir = PathBuf::new();
        sha256_hex(&serde_json::to_vec(&file).expect("config serialises"))
    }

    /// SHA-256 over the sections that determine the original and retrained models.
    pub fn training_hash(&self) -> String {
        let key = serde_json::json!({
            "dataset": self.file.dataset,
            "partition": self.file.partition,
            "model": self.file.model,
            "federation": {
                "rounds": self.file.federation.rounds,
                "local_epochs": self.file.federation.local_epochs,
                "client_lr": self.file.federation.client_lr,
                "lr_decay": self.file.federation.lr_decay,
                "batch_size": self.file.federation.batch_size,
                "server_lr": self.file.federation.server_lr,
            },
        });
        sha256_hex(&serde_json::to_vec(&key).expect("json value serialises"))
    }

    /// SHA-256 over everything that determines one unlearning-and-recovery run.
    pub fn method_hash(&self) -> String {
        let key = serde_json::json!({
            "training": self.training_hash(),
            "unlearning": self.file.unlearning,
            "max_recovery_rounds": self.max_recovery_rounds,
        });
        sha256_hex(&serde_json::to_vec(&key).expect("json value serialises"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads, overrides and validates a config file. `.json` files are parsed as JSON,
/// everything else as TOML. Relative CSV paths resolve against the file's directory.
pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
    let json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut file = if json {
        from_json(&text)?
    } else {
        from_toml(&text)?
    };
    if let Some(dir) = path.parent() {
        for p in [&mut file.dataset.train, &mut file.dataset.test]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
    resolve(file, overrides)
}

pub fn from_toml(text: &str) -> Result<ConfigFile> {
    toml::from_str(text)
        .map_err(|e| CliError::config(key_of(&e.to_string()), e.message().to_string()))
}

pub fn from_json(text: &str) -> Result<ConfigFile> {
    serde_json::from_str(text).map_err(|e| CliError::config(key_of(&e.to_string()), e.to_string()))
}

/// Pulls the first backquoted name out of a serde message ("unknown field `foo`").
fn key_of(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "config".to_string())
}

fn check(ok: bool, key: &str, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(key, message()))
    }
}

/// Applies overrides and checks every invariant, naming the offending key on failure.
pub fn resolve(mut file: ConfigFile, overrides: &Overrides) -> Result<ExperimentConfig> {
    if let Some(seed) = overrides.seed {
        file.experiment.seeds = vec![seed];
    }
    if let Some(dir) = &overrides.out_dir {
        file.experiment.out_dir = dir.clone();
    }
    if let Some(method) = overrides.method {
        file.unlearning.method = method;
    }
    if let Some(v) = &overrides.v {
        file.unlearning.v = Some(v.clone());
    }

    let d = &file.dataset;
    let dataset = match d.kind {
        DatasetKind::Blobs => {
            let num_classes = d.num_classes.unwrap_or(3);
            check(num_classes >= 2, "num_classes", || {
                format!("need at least 2 classes, got {num_classes}")
            })?;
            check(d.per_class >= 1, "per_class", || {
                "must be at least 1".into()
            })?;
            check(d.test_per_class >= 1, "test_per_class", || {
                "must be at least 1".into()
            })?;
            check(d.dim >= 1, "dim", || "must be at least 1".into())?;
            check(d.spread > 0.0 && d.spread.is_finite(), "spread", || {
                format!("must be positive, got {}", d.spread)
            })?;
            DatasetSource::Blobs {
                num_classes,
                per_class: d.per_class,
                dim: d.dim,
                spread: d.spread,
                test_per_class: d.test_per_class,
            }
        }
        DatasetKind::Csv => {
            let train = d
                .train
                .clone()
                .ok_or_else(|| CliError::config("train", "csv dataset needs a `train` path"))?;
            let test = d
                .test
                .clone()
                .ok_or_else(|| CliError::config("test", "csv dataset needs a `test` path"))?;
            if let Some(c) = d.num_classes {
                check(c >= 2, "num_classes", || {
                    format!("need at least 2 classes, got {c}")
                })?;
            }
            DatasetSource::Csv {
                train,
                test,
                num_classes: d.num_classes,
            }
        }
    };

    let p = &file.partition;
    check(p.num_clients >= 2, "num_clients", || {
        format!("need at least 2 clients, got {}", p.num_clients)
    })?;
    let partition = match p.kind {
        PartitionKindName::Iid => PartitionKind::Iid,
        PartitionKindName::Dirichlet => {
            let alpha = p
                .alpha
                .ok_or_else(|| CliError::config("alpha", "dirichlet partition needs `alpha`"))?;
            check(alpha > 0.0 && alpha.is_finite(), "alpha", || {
                format!("must be positive, got {alpha}")
            })?;
            PartitionKind::Dirichlet { alpha }
        }
    };

    let (dim, classes) = match &dataset {
        DatasetSource::Blobs {
            num_classes, dim, ..
        } => (Some(*dim), Some(*num_classes)),
        DatasetSource::Csv { num_classes, .. } => (None, *num_classes),
    };
    check(file.model.hidden.iter().all(|&h| h >= 1), "hidden", || {
        "layer sizes must be at least 1".into()
    })?;
    // CSV shapes are only known once the files are read; the pipeline rebuilds the
    // architecture then. Placeholders keep the type valid until that point.
    let mut sizes = vec![dim.unwrap_or(1)];
    sizes.extend(&file.model.hidden);
    sizes.push(classes.unwrap_or(2));
    let arch = Architecture::new(sizes, file.model.activation)
        .map_err(|e| CliError::config("hidden", e.to_string()))?;

    let f = &file.federation;
    check(f.rounds >= 1, "rounds", || "must be at least 1".into())?;
    check(f.local_epochs >= 1, "local_epochs", || {
        "must be at least 1".into()
    })?;
    check(
        f.client_lr > 0.0 && f.client_lr.is_finite(),
        "client_lr",
        || format!("must be positive, got {}", f.client_lr),
    )?;
    check(f.lr_decay > 0.0 && f.lr_decay <= 1.0, "lr_decay", || {
        format!("must be in (0, 1], got {}", f.lr_decay)
    })?;
    check(f.batch_size >= 1, "batch_size", || {
        "must be at least 1".into()
    })?;
    check(
        f.server_lr > 0.0 && f.server_lr.is_finite(),
        "server_lr",
        || format!("must be positive, got {}", f.server_lr),
    )?;
    let max_recovery_rounds = f.max_recovery_rounds.unwrap_or(2 * f.rounds);
    check(max_recovery_rounds >= 1, "max_recovery_rounds", || {
        "must be at least 1".into()
    })?;
    let federation = FederationConfig {
        rounds: f.rounds,
        local_epochs: f.local_epochs,
        client_lr: f.client_lr,
        lr_decay: f.lr_decay,
        batch_size: f.batch_size,
        server_lr: f.server_lr,
        seed: 0,
    };

    let u = &file.unlearning;
    let method = match (u.method, &u.v) {
        (MethodName::FedquitLogits, None) => {
            Method::Fedquit(TeacherVariant::LogitsFixed { v: 0.0 })
        }
        (MethodName::FedquitLogits, Some(PenaltyValue::Number(v))) => {
            check(v.is_finite(), "v", || format!("must be finite, got {v}"))?;
            Method::Fedquit(TeacherVariant::LogitsFixed { v: *v })
        }
        (MethodName::FedquitSoftmax, None) => {
            Method::Fedquit(TeacherVariant::SoftmaxFixed { v: 0.0 })
        }
        (MethodName::FedquitSoftmax, Some(PenaltyValue::Number(v))) => {
            check((0.0..1.0).contains(v), "v", || {
                format!("softmax penalty must be in [0, 1), got {v}")
            })?;
            Method::Fedquit(TeacherVariant::SoftmaxFixed { v: *v })
        }
        (MethodName::FedquitLogits, Some(PenaltyValue::Keyword(k))) if k == "min" => {
            Method::Fedquit(TeacherVariant::LogitsMin)
        }
        (MethodName::FedquitSoftmax, Some(PenaltyValue::Keyword(k))) if k == "min" => {
            return Err(CliError::config(
                "v",
                "`min` only applies to fedquit-logits",
            ));
        }
        (_, Some(PenaltyValue::Keyword(k))) if k != "min" => {
            return Err(CliError::config(
                "v",
                format!("expected a real number or `min`, got `{k}`"),
            ));
        }
        (MethodName::Incompetent, _) => Method::Fedquit(TeacherVariant::Incompetent),
        (MethodName::Natural, _) => Method::Natural,
        (_, Some(PenaltyValue::Keyword(_))) => unreachable!("keyword cases handled above"),
    };
    check(u.epochs >= 1, "epochs", || "must be at least 1".into())?;
    check(u.lr > 0.0 && u.lr.is_finite(), "lr", || {
        format!("must be positive, got {}", u.lr)
    })?;
    check(u.batch_size >= 1, "batch_size", || {
        "must be at least 1".into()
    })?;
    check(
        u.temperature > 0.0 && u.temperature.is_finite(),
        "temperature",
        || format!("must be positive, got {}", u.temperature),
    )?;
    let unlearn = UnlearnConfig {
        variant: match method {
            Method::Fedquit(variant) => variant,
            Method::Natural => TeacherVariant::default(),
        },
        epochs: u.epochs,
        lr: u.lr,
        batch_size: u.batch_size,
        optimizer: u.optimizer,
        temperature: u.temperature,
        seed: 0,
    };

    let e = &file.experiment;
    let clients = match &e.unlearn_client {
        ClientField::Index(k) => {
            check(*k < p.num_clients, "unlearn_client", || {
                format!("client {k} out of range for {} clients", p.num_clients)
            })?;
            ClientSelection::One(*k)
        }
        ClientField::Keyword(s) if s == "each" => ClientSelection::Each,
        ClientField::Keyword(s) => {
            return Err(CliError::config(
                "unlearn_client",
                format!("expected an index or \"each\", got `{s}`"),
            ));
        }
    };
    check(!e.seeds.is_empty(), "seeds", || {
        "at least one seed is required".into()
    })?;
    let mut distinct = e.seeds.clone();
    distinct.sort_unstable();
    distinct.dedup();
    check(distinct.len() == e.seeds.len(), "seeds", || {
        "seeds must be distinct".into()
    })?;

    Ok(ExperimentConfig {
        dataset,
        partition,
        num_clients: p.num_clients,
        arch,
        federation,
        max_recovery_rounds,
        method,
        unlearn,
        clients,
        seeds: e.seeds.clone(),
        out_dir: e.out_dir.clone(),
        file,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset]
kind = "blobs"

[partition]
kind = "dirichlet"
alpha = 0.3
num_clients = 5

[federation]
rounds = 60

[experiment]
unlearn_client = "each"
seeds = [0]
"#;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        resolve(from_toml(text)?, &Overrides::default())
    }

    fn key(err: CliError) -> String {
        match err {
            CliError::Config { key, .. } => key,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(
            cfg.method,
            Method::Fedquit(TeacherVariant::LogitsFixed { v: 0.0 })
        );
        assert_eq!(cfg.unlearn.epochs, 1);
        assert_eq!(cfg.unlearn.temperature, 1.0);
        assert_eq!(cfg.unlearn.optimizer, OptimizerKind::Adam);
        assert_eq!(cfg.arch.layer_sizes(), &[2, 16, 3]);
        assert_eq!(cfg.max_recovery_rounds, 120);
        assert_eq!(cfg.federation.server_lr, 1.0);
        assert_eq!(cfg.designated_clients(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn negative_alpha_names_alpha() {
        let err = parse(&MINIMAL.replace("alpha = 0.3", "alpha = -1")).unwrap_err();
        assert_eq!(key(err), "alpha");
    }

    #[test]
    fn out_of_range_client_names_unlearn_client() {
        let err = parse(&MINIMAL.replace("\"each\"", "5")).unwrap_err();
        assert_eq!(key(err), "unlearn_client");
        assert!(parse(&MINIMAL.replace("\"each\"", "4")).is_ok());
    }

    #[test]
    fn unknown_and_missing_keys_are_named() {
        let err = parse(&MINIMAL.replace("rounds = 60", "rounds = 60\nwarmup = 3")).unwrap_err();
        assert_eq!(key(err), "warmup");
        let err = parse(&MINIMAL.replace("rounds = 60", "")).unwrap_err();
        assert_eq!(key(err), "rounds");
    }

    #[test]
    fn method_and_penalty_mapping() {
        let with = |m: &str, v: &str| {
            parse(&format!(
                "{MINIMAL}\n[unlearning]\nmethod = \"{m}\"\nv = {v}\n"
            ))
        };
        assert_eq!(
            with("fedquit-logits", "\"min\"").unwrap().method,
            Method::Fedquit(TeacherVariant::LogitsMin)
        );
        assert_eq!(
            with("fedquit-softmax", "0.25").unwrap().method,
            Method::Fedquit(TeacherVariant::SoftmaxFixed { v: 0.25 })
        );
        assert_eq!(key(with("fedquit-softmax", "1.5").unwrap_err()), "v");
        assert_eq!(key(with("fedquit-softmax", "\"min\"").unwrap_err()), "v");
        assert_eq!(key(with("fedquit-logits", "\"max\"").unwrap_err()), "v");
        assert_eq!(with("natural", "0").unwrap().method, Method::Natural);
        assert_eq!(
            with("incompetent", "0").unwrap().method,
            Method::Fedquit(TeacherVariant::Incompetent)
        );
    }

    #[test]
    fn overrides_take_precedence() {
        let overrides = Overrides {
            seed: Some(9),
            out_dir: Some("elsewhere".into()),
            method: Some(MethodName::Natural),
            v: None,
        };
        let cfg = resolve(from_toml(MINIMAL).unwrap(), &overrides).unwrap();
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.method, Method::Natural);
        assert_eq!(
            "min".parse::<PenaltyValue>().unwrap(),
            PenaltyValue::Keyword("min".into())
        );
        assert!("abc".parse::<PenaltyValue>().is_err());
    }

    #[test]
    fn json_is_an_equivalent_encoding() {
        let toml_cfg = from_toml(MINIMAL).unwrap();
        let json = serde_json::to_string(&toml_cfg).unwrap();
        assert_eq!(from_json(&json).unwrap(), toml_cfg);
        let err = from_json(r#"{"dataset": {"kind": "blobs", "colour": 1}}"#).unwrap_err();
        assert_eq!(key(err), "colour");
    }

    #[test]
    fn hashes_separate_training_from_unlearning() {
        let a = parse(MINIMAL).unwrap();
        let b = parse(&format!("{MINIMAL}\n[unlearning]\nlr = 0.01\n")).unwrap();
        assert_eq!(a.training_hash(), b.training_hash());
        assert_ne!(a.config_hash(), b.config_hash());
        let c = parse(&MINIMAL.replace("rounds = 60", "rounds = 61")).unwrap();
        assert_ne!(a.training_hash(), c.training_hash());
    }
}
