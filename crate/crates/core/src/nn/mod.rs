//! Minimal dense neural-network engine.
//!
//! A fixed MLP graph: affine layers with a shared hidden activation and raw logits at
//! the output. Gradients are computed analytically for a softmax head trained against a
//! target distribution, which covers both hard-label cross-entropy and distillation.

mod optim;
mod params;
mod prob;

use serde::{Deserialize, Serialize};

pub use optim::{Optimizer, OptimizerKind};
pub use params::{serialized_len, GradientSet, LayerSpan, ParameterSet};
pub use prob::{
    argmax, cross_entropy, kl_divergence, softmax, ProbVector, PROB_FLOOR, SUM_TOLERANCE,
};
pub(crate) use prob::{cross_entropy_raw, kl_divergence_raw, softmax_unchecked};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and activation `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Layer widths from input dimension to class count, plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
    hidden_activation: Activation,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, hidden_activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::domain(
                "an architecture needs at least input and output sizes",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::domain(format!(
                "zero-width layer in {layer_sizes:?}"
            )));
        }
        if *layer_sizes.last().unwrap() < 2 {
            return Err(Error::domain("the output layer needs at least 2 classes"));
        }
        Ok(Self {
            layer_sizes,
            hidden_activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn check_params(&self, params: &ParameterSet) -> Result<()> {
        if params.matches(self) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "parameters have layout {:?}, architecture is {:?}",
                params.layer_sizes(),
                self.layer_sizes
            )))
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.input_dim() {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim()
            )))
        }
    }
}

/// Which loss the softmax head is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `H(target, p)`; with one-hot targets this is ordinary cross-entropy.
    CrossEntropyHard,
    /// `KL(target ‖ p)`, where `target` is a teacher distribution.
    KlToTeacher,
}

/// Pre-activations and activations of every layer, input included as `activations[0]`.
struct Trace {
    pre: Vec<Vec<f64>>,
    activations: Vec<Vec<f64>>,
}

fn forward_trace(params: &ParameterSet, arch: &Architecture, x: &[f64]) -> Trace {
    let spans = params.spans();
    let values = params.values();
    let last = spans.len() - 1;
    let mut pre = Vec::with_capacity(spans.len());
    let mut activations = Vec::with_capacity(spans.len() + 1);
    activations.push(x.to_vec());
    for (l, span) in spans.iter().enumerate() {
        let input = &activations[l];
        let weights = &values[span.weights..span.bias];
        let bias = &values[span.bias..span.end()];
        let z: Vec<f64> = (0..span.outputs)
            .map(|o| {
                let row = &weights[o * span.inputs..(o + 1) * span.inputs];
                row.iter()
                    .zip(input)
                    .fold(bias[o], |acc, (w, a)| acc + w * a)
            })
            .collect();
        let a = if l == last {
            z.clone()
        } else {
            z.iter().map(|&v| arch.hidden_activation.apply(v)).collect()
        };
        pre.push(z);
        activations.push(a);
    }
    Trace { pre, activations }
}

/// Logits of the network for one input.
pub fn forward(params: &ParameterSet, arch: &Architecture, x: &[f64]) -> Result<Vec<f64>> {
    arch.check_params(params)?;
    arch.check_input(x)?;
    let mut trace = forward_trace(params, arch, x);
    Ok(trace.activations.pop().expect("trace has an output layer"))
}

/// Class probabilities `softmax(forward(x), τ)`.
pub fn predict(
    params: &ParameterSet,
    arch: &Architecture,
    x: &[f64],
    temperature: f64,
) -> Result<ProbVector> {
    softmax(&forward(params, arch, x)?, temperature)
}

/// Gradient of the mean batch loss and the mean loss itself.
///
/// The student distribution is `softmax(z / τ)`, so the logit gradient of every example
/// is `(p − target) / (τ · batch_size)`. Reported KL values include the teacher entropy.
pub fn backprop(
    params: &ParameterSet,
    arch: &Architecture,
    batch: &[(&[f64], &ProbVector)],
    loss: LossKind,
    temperature: f64,
) -> Result<(GradientSet, f64)> {
    if batch.is_empty() {
        return Err(Error::domain("backprop on an empty batch"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    arch.check_params(params)?;
    let classes = arch.num_classes();
    for (x, target) in batch {
        arch.check_input(x)?;
        if target.len() != classes {
            return Err(Error::shape(format!(
                "target has {} classes, network outputs {classes}",
                target.len()
            )));
        }
    }

    let spans = params.spans();
    let values = params.values();
    let mut grads = params.zeros_like();
    let g = grads.values_mut();
    let scale = 1.0 / batch.len() as f64;
    let mut total_loss = 0.0;

    for (x, target) in batch {
        let trace = forward_trace(params, arch, x);
        let logits = trace.activations.last().unwrap();
        let p = softmax_unchecked(logits, temperature);
        total_loss += match loss {
            LossKind::CrossEntropyHard => cross_entropy_raw(target.as_slice(), &p),
            LossKind::KlToTeacher => kl_divergence_raw(target.as_slice(), &p),
        };

        let mut delta: Vec<f64> = p
            .iter()
            .zip(target.as_slice())
            .map(|(pc, tc)| (pc - tc) * scale / temperature)
            .collect();

        for l in (0..spans.len()).rev() {
            let span = spans[l];
            let input = &trace.activations[l];
            for o in 0..span.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = span.weights + o * span.inputs;
                for (gw, a) in g[row..row + span.inputs].iter_mut().zip(input) {
                    *gw += d * a;
                }
                g[span.bias + o] += d;
            }
            if l == 0 {
                break;
            }
            let weights = &values[span.weights..span.bias];
            let below_pre = &trace.pre[l - 1];
            delta = (0..span.inputs)
                .map(|i| {
                    let back: f64 = (0..span.outputs)
                        .map(|o| weights[o * span.inputs + i] * delta[o])
                        .sum();
                    back * arch.hidden_activation.derivative(below_pre[i], input[i])
                })
                .collect();
        }
    }

    Ok((grads, total_loss * scale))
}

/// Mean loss of a batch without computing gradients.
pub fn batch_loss(
    params: &ParameterSet,
    arch: &Architecture,
    batch: &[(&[f64], &ProbVector)],
    loss: LossKind,
    temperature: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::domain("loss of an empty batch"));
    }
    let mut total = 0.0;
    for (x, target) in batch {
        let p = predict(params, arch, x, temperature)?;
        total += match loss {
            LossKind::CrossEntropyHard => cross_entropy(target, &p)?,
            LossKind::KlToTeacher => kl_divergence(target, &p)?,
        };
    }
    Ok(total / batch.len() as f64)
}
