//! Client unlearning by distillation from a quasi-competent virtual teacher.
//!
//! The teacher is the frozen global model whose output on each forget example is
//! edited to penalise the true class, either on the logits (the true-class logit is
//! replaced by `v`) or on the probabilities (the true-class mass is set to `v` and the
//! difference spread evenly over the other classes). The student starts as a copy of
//! the global model and minimises `KL(teacher ‖ student)` on the forget set only.

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::federation::local_train;
use crate::nn::{
    backprop, forward, softmax, softmax_unchecked, Architecture, LossKind, Optimizer,
    OptimizerKind, ParameterSet, ProbVector,
};
use crate::rng::{stream, Stream};
use crate::{Error, Result};

/// How the teacher's output on a forget example is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherVariant {
    /// True-class logit replaced by a fixed `v`.
    LogitsFixed { v: f64 },
    /// True-class logit replaced by the smallest logit of the same example.
    LogitsMin,
    /// True-class probability set to `v ∈ [0, 1)`, remainder spread over other classes.
    SoftmaxFixed { v: f64 },
    /// Uniform distribution regardless of input.
    Incompetent,
}

impl Default for TeacherVariant {
    fn default() -> Self {
        TeacherVariant::LogitsFixed { v: 0.0 }
    }
}

impl TeacherVariant {
    /// Short tag used in file names and tables.
    pub fn tag(&self) -> String {
        match self {
            TeacherVariant::LogitsFixed { v } => format!("fedquit-logits-v{v}"),
            TeacherVariant::LogitsMin => "fedquit-logits-vmin".to_string(),
            TeacherVariant::SoftmaxFixed { v } => format!("fedquit-softmax-v{v}"),
            TeacherVariant::Incompetent => "incompetent".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TeacherVariant::LogitsFixed { v } if !v.is_finite() => Err(Error::domain(format!(
                "logit penalty must be finite, got {v}"
            ))),
            TeacherVariant::SoftmaxFixed { v } if !(0.0..1.0).contains(&v) => Err(Error::domain(
                format!("softmax penalty must be in [0, 1), got {v}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub variant: TeacherVariant,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            variant: TeacherVariant::default(),
            epochs: 1,
            lr: 1e-3,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        self.variant.validate()?;
        if self.epochs == 0 {
            return Err(Error::domain("unlearning epochs must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::domain(format!(
                "unlearning rate must be non-negative, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("unlearning batch size must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::domain(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

fn check_class(y: usize, classes: usize) -> Result<()> {
    if y < classes {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "true class {y} out of range for {classes} classes"
        )))
    }
}

/// Replaces the true-class logit with `v` and applies the tempered softmax.
pub fn modify_outputs_logits(
    logits: &[f64],
    y: usize,
    v: f64,
    temperature: f64,
) -> Result<ProbVector> {
    check_class(y, logits.len())?;
    let mut z = logits.to_vec();
    z[y] = v;
    softmax(&z, temperature)
}

/// Teacher distribution from probability redistribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxTarget {
    pub probs: ProbVector,
    /// Whether an entry fell outside `[0, 1]` and had to be clamped. Besides negative
    /// entries when `v > g(y)`, this covers rounding just past 1.
    pub repaired: bool,
}

/// Sets `g'(y) = v` and adds `(g(y) − v)/(C − 1)` to every other class.
///
/// When `v > g(y)` this can push classes below zero; those entries are clamped to 0 and
/// the vector is renormalised.
pub fn modify_outputs_softmax(g: &ProbVector, y: usize, v: f64) -> Result<SoftmaxTarget> {
    let c = g.len();
    if c < 2 {
        return Err(Error::domain(
            "probability redistribution needs at least 2 classes",
        ));
    }
    check_class(y, c)?;
    if !(0.0..1.0).contains(&v) {
        return Err(Error::domain(format!(
            "softmax penalty must be in [0, 1), got {v}"
        )));
    }
    let share = (g[y] - v) / (c - 1) as f64;
    let mut out: Vec<f64> = g
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == y { v } else { p + share })
        .collect();
    let repaired = out.iter().any(|&p| !(0.0..=1.0).contains(&p));
    if repaired {
        out.iter_mut().for_each(|p| *p = p.max(0.0));
        let sum: f64 = out.iter().sum();
        out.iter_mut().for_each(|p| *p = (*p / sum).min(1.0));
    }
    Ok(SoftmaxTarget {
        probs: ProbVector::new(out)?,
        repaired,
    })
}

/// Uniform `1/C` teacher.
pub fn incompetent_teacher(num_classes: usize) -> Result<ProbVector> {
    if num_classes < 2 {
        return Err(Error::domain(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    ProbVector::uniform(num_classes)
}

/// Teacher target for one example from the frozen teacher's logits.
///
/// The second value reports whether softmax redistribution needed clamp repair.
pub fn teacher_target(
    variant: &TeacherVariant,
    teacher_logits: &[f64],
    y: usize,
    temperature: f64,
) -> Result<(ProbVector, bool)> {
    match *variant {
        TeacherVariant::LogitsFixed { v } => Ok((
            modify_outputs_logits(teacher_logits, y, v, temperature)?,
            false,
        )),
        TeacherVariant::LogitsMin => {
            let v = teacher_logits.iter().copied().fold(f64::INFINITY, f64::min);
            Ok((
                modify_outputs_logits(teacher_logits, y, v, temperature)?,
                false,
            ))
        }
        TeacherVariant::SoftmaxFixed { v } => {
            let g = softmax(teacher_logits, temperature)?;
            let t = modify_outputs_softmax(&g, y, v)?;
            Ok((t.probs, t.repaired))
        }
        TeacherVariant::Incompetent => {
            check_class(y, teacher_logits.len())?;
            Ok((incompetent_teacher(teacher_logits.len())?, false))
        }
    }
}

/// Outcome of a distillation run on the forget set.
#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub model: ParameterSet,
    /// Mean KL loss of every minibatch, in order.
    pub batch_losses: Vec<f64>,
    /// Number of teacher targets that required clamp repair.
    pub repaired_targets: usize,
}

/// Arguments handed to a teacher callback for one forget example.
pub struct TeacherQuery<'a> {
    pub epoch: usize,
    /// Position of the example in the forget set.
    pub index: usize,
    pub label: usize,
    /// Logits of the frozen teacher (the model passed in as `global`).
    pub teacher_logits: &'a [f64],
}

/// Distils a student, initialised from `global`, towards per-example teacher targets.
///
/// The teacher logits always come from `global`, which is never modified; `target`
/// turns them into the distribution to match and returns whether it was repaired.
pub fn distill_on_forget_set<F>(
    global: &ParameterSet,
    arch: &Architecture,
    forget: &Dataset,
    cfg: &UnlearnConfig,
    mut target: F,
) -> Result<UnlearnOutcome>
where
    F: FnMut(TeacherQuery<'_>) -> Result<(ProbVector, bool)>,
{
    cfg.validate()?;
    if forget.is_empty() {
        return Err(Error::domain("unlearning needs a nonempty forget set"));
    }
    if !global.matches(arch) {
        return Err(Error::shape("global model does not match the architecture"));
    }
    let mut student = global.clone();
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr)?;
    let mut rng = stream(cfg.seed, Stream::Unlearn);
    let mut order: Vec<usize> = (0..forget.len()).collect();
    let mut batch_losses = Vec::new();
    let mut repaired_targets = 0;

    for epoch in 0..cfg.epochs {
        // Every epoch is a fresh permutation, so E epochs in one call match E calls.
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut targets = Vec::with_capacity(chunk.len());
            let mut repaired_here = 0;
            for &i in chunk {
                let ex = &forget.examples()[i];
                let teacher_logits = forward(global, arch, &ex.features)?;
                let (t, repaired) = target(TeacherQuery {
                    epoch,
                    index: i,
                    label: ex.label,
                    teacher_logits: &teacher_logits,
                })?;
                repaired_here += repaired as usize;
                targets.push(t);
            }
            if repaired_here > 0 {
                debug!(
                    "teacher repair: {repaired_here} of {} targets clamped and renormalised",
                    chunk.len()
                );
                repaired_targets += repaired_here;
            }
            let batch: Vec<(&[f64], &ProbVector)> = chunk
                .iter()
                .zip(&targets)
                .map(|(&i, t)| (forget.examples()[i].features.as_slice(), t))
                .collect();
            let (grads, loss) = backprop(
                &student,
                arch,
                &batch,
                LossKind::KlToTeacher,
                cfg.temperature,
            )?;
            optimizer.step(&mut student, &grads)?;
            batch_losses.push(loss);
        }
    }

    Ok(UnlearnOutcome {
        model: student,
        batch_losses,
        repaired_targets,
    })
}

/// Local unlearning routine run by the departing client on its own data.
pub fn fedquit_unlearn(
    global: &ParameterSet,
    arch: &Architecture,
    forget: &Dataset,
    cfg: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    let variant = cfg.variant;
    let tau = cfg.temperature;
    distill_on_forget_set(global, arch, forget, cfg, |q| {
        teacher_target(&variant, q.teacher_logits, q.label, tau)
    })
}

/// No unlearning: the global model is handed back untouched.
pub fn natural_baseline(global: &ParameterSet) -> ParameterSet {
    global.clone()
}

/// Hard-label fine-tuning schedule applied after centralized unlearning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Unlearning on centrally held forget data followed by `finetune_epochs` epochs of
/// SGD on the retain data.
///
/// Element 0 is the unlearned model, element `i` the model after `i` fine-tuning epochs.
pub fn centralized_fedquit(
    model: &ParameterSet,
    arch: &Architecture,
    forget: &Dataset,
    retain: &Dataset,
    cfg: &UnlearnConfig,
    finetune_epochs: usize,
    finetune: &FineTuneConfig,
) -> Result<Vec<ParameterSet>> {
    let mut models = vec![fedquit_unlearn(model, arch, forget, cfg)?.model];
    let mut rng = stream(finetune.seed, Stream::FineTune);
    for _ in 0..finetune_epochs {
        let last = models.last().expect("at least the unlearned model");
        let next = local_train(
            last,
            arch,
            retain,
            1,
            finetune.lr,
            finetune.batch_size,
            &mut rng,
        )?;
        models.push(next.params);
    }
    Ok(models)
}

/// Mean probability the model assigns to the true class over `data` (τ = 1).
pub fn mean_true_class_probability(
    params: &ParameterSet,
    arch: &Architecture,
    data: &Dataset,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("empty dataset"));
    }
    let mut total = 0.0;
    for ex in data.examples() {
        check_class(ex.label, arch.num_classes())?;
        total += softmax_unchecked(&forward(params, arch, &ex.features)?, 1.0)[ex.label];
    }
    Ok(total / data.len() as f64)
}
