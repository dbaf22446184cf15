//! Forward pass and backprop checked against independent routes: a hand-rolled
//! nested-loop forward pass, values frozen from a 40-digit evaluation, and central
//! finite differences of the reported loss.

#![allow(clippy::excessive_precision)]

use fedquit_core::nn::{
    backprop, batch_loss, forward, softmax, Activation, Architecture, LossKind, ParameterSet,
    ProbVector,
};
use fedquit_core::rng::{stream, Stream};
use proptest::prelude::*;
use rand::Rng;

fn sine_params(arch: &Architecture) -> ParameterSet {
    let n = ParameterSet::zeros(arch).len();
    let values = (0..n).map(|i| ((i + 1) as f64).sin() * 0.5).collect();
    ParameterSet::from_values(arch.layer_sizes().to_vec(), values).unwrap()
}

/// Straightforward re-implementation over nested vectors.
fn naive_forward(params: &ParameterSet, arch: &Architecture, x: &[f64]) -> Vec<f64> {
    let sizes = arch.layer_sizes();
    let v = params.values();
    let mut offset = 0;
    let mut a = x.to_vec();
    for l in 0..sizes.len() - 1 {
        let (inp, out) = (sizes[l], sizes[l + 1]);
        let mut w = vec![vec![0.0; inp]; out];
        for (r, row) in w.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = v[offset + r * inp + c];
            }
        }
        let b = &v[offset + inp * out..offset + inp * out + out];
        offset += inp * out + out;
        let mut z = vec![0.0; out];
        for r in 0..out {
            z[r] = b[r];
            for c in 0..inp {
                z[r] += w[r][c] * a[c];
            }
        }
        a = if l + 2 < sizes.len() {
            z.iter()
                .map(|&t| match arch.hidden_activation() {
                    Activation::Relu => t.max(0.0),
                    Activation::Tanh => t.tanh(),
                })
                .collect()
        } else {
            z
        };
    }
    a
}

#[test]
fn forward_matches_frozen_high_precision_values() {
    let x = [0.5, -1.25, 2.0];
    let tanh = Architecture::new(vec![3, 4, 2], Activation::Tanh).unwrap();
    let z = forward(&sine_params(&tanh), &tanh, &x).unwrap();
    assert!((z[0] - -0.337_155_774_783_553_763_67).abs() < 1e-12);
    assert!((z[1] - 0.344_977_174_261_088_566_29).abs() < 1e-12);
    let p = softmax(&z, 1.0).unwrap();
    assert!((p[0] - 0.335_785_416_850_181_254_5).abs() < 1e-12);

    let relu = Architecture::new(vec![3, 4, 2], Activation::Relu).unwrap();
    let z = forward(&sine_params(&relu), &relu, &x).unwrap();
    assert!((z[0] - -0.280_020_974_462_961_520_94).abs() < 1e-12);
    assert!((z[1] - 0.258_700_749_386_616_430_35).abs() < 1e-12);
}

#[test]
fn forward_matches_naive_oracle_on_random_nets() {
    for seed in 0..50u64 {
        let mut rng = stream(seed, Stream::Init);
        let arch = random_arch(&mut rng, Activation::Relu);
        let params = ParameterSet::glorot_uniform(&arch, &mut rng);
        let x: Vec<f64> = (0..arch.input_dim())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let fast = forward(&params, &arch, &x).unwrap();
        let slow = naive_forward(&params, &arch, &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
        }
    }
}

fn random_arch<R: Rng>(rng: &mut R, activation: Activation) -> Architecture {
    let hidden = rng.random_range(0..=2);
    let mut sizes = vec![rng.random_range(1..=10)];
    for _ in 0..hidden {
        sizes.push(rng.random_range(1..=8));
    }
    sizes.push(rng.random_range(2..=5));
    Architecture::new(sizes, activation).unwrap()
}

/// Glorot weights plus random biases, so no ReLU pre-activation sits exactly on its kink.
fn random_params<R: Rng>(arch: &Architecture, rng: &mut R) -> ParameterSet {
    let mut params = ParameterSet::glorot_uniform(arch, rng);
    for span in params.spans() {
        for b in &mut params.values_mut()[span.bias..span.end()] {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    params
}

fn random_target<R: Rng>(rng: &mut R, classes: usize, loss: LossKind) -> ProbVector {
    match loss {
        LossKind::CrossEntropyHard => {
            ProbVector::one_hot(rng.random_range(0..classes), classes).unwrap()
        }
        LossKind::KlToTeacher => {
            let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            ProbVector::new(raw.iter().map(|r| r / s).collect()).unwrap()
        }
    }
}

/// Largest relative error between analytic and central-difference gradients.
///
/// Relative error uses `max(|a|, |b|, 1e-6)` as denominator so vanishing entries are
/// compared on an absolute scale.
fn max_relative_error(
    params: &ParameterSet,
    arch: &Architecture,
    batch: &[(&[f64], &ProbVector)],
    loss: LossKind,
    temperature: f64,
) -> f64 {
    let (grads, _) = backprop(params, arch, batch, loss, temperature).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus.values_mut()[i] += h;
        let mut minus = params.clone();
        minus.values_mut()[i] -= h;
        let fd = (batch_loss(&plus, arch, batch, loss, temperature).unwrap()
            - batch_loss(&minus, arch, batch, loss, temperature).unwrap())
            / (2.0 * h);
        let a = grads.values()[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn single_example_tiny_net_matches_finite_differences() {
    let arch = Architecture::new(vec![2, 3, 2], Activation::Tanh).unwrap();
    let params = ParameterSet::glorot_uniform(&arch, &mut stream(1, Stream::Init));
    let x = [0.7, -0.4];
    let target = ProbVector::one_hot(1, 2).unwrap();
    for loss in [LossKind::CrossEntropyHard, LossKind::KlToTeacher] {
        let err = max_relative_error(&params, &arch, &[(&x[..], &target)], loss, 1.0);
        assert!(err < 1e-4, "{loss:?}: {err}");
    }
}

#[test]
fn finite_differences_over_one_hundred_random_cases() {
    let mut checked = 0;
    for seed in 0..120u64 {
        let mut rng = stream(seed, Stream::Mia);
        let activation = if seed % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let arch = random_arch(&mut rng, activation);
        let params = random_params(&arch, &mut rng);
        let temperature = if seed % 3 == 0 { 2.0 } else { 1.0 };
        let n = rng.random_range(1..=4);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..arch.input_dim())
                    .map(|_| rng.random_range(-1.5..1.5))
                    .collect()
            })
            .collect();
        for loss in [LossKind::CrossEntropyHard, LossKind::KlToTeacher] {
            let targets: Vec<ProbVector> = (0..n)
                .map(|_| random_target(&mut rng, arch.num_classes(), loss))
                .collect();
            let batch: Vec<(&[f64], &ProbVector)> = xs
                .iter()
                .zip(&targets)
                .map(|(x, t)| (x.as_slice(), t))
                .collect();
            let err = max_relative_error(&params, &arch, &batch, loss, temperature);
            assert!(
                err < 1e-4,
                "seed {seed} {loss:?} arch {:?}: {err}",
                arch.layer_sizes()
            );
            checked += 1;
        }
    }
    assert!(checked >= 200);
}

#[test]
fn backprop_is_bitwise_deterministic() {
    let arch = Architecture::new(vec![4, 8, 3], Activation::Relu).unwrap();
    let params = ParameterSet::glorot_uniform(&arch, &mut stream(3, Stream::Init));
    let x = [0.1, 0.9, -0.3, 0.2];
    let t = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
    let (g1, l1) = backprop(&params, &arch, &[(&x[..], &t)], LossKind::KlToTeacher, 1.0).unwrap();
    let (g2, l2) = backprop(&params, &arch, &[(&x[..], &t)], LossKind::KlToTeacher, 1.0).unwrap();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert!(g1
        .values()
        .iter()
        .zip(g2.values())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradients_agree_with_finite_differences(seed in any::<u64>(), tanh in any::<bool>()) {
        let mut rng = stream(seed, Stream::Init);
        let arch = random_arch(&mut rng, if tanh { Activation::Tanh } else { Activation::Relu });
        let params = random_params(&arch, &mut rng);
        let x: Vec<f64> = (0..arch.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for loss in [LossKind::CrossEntropyHard, LossKind::KlToTeacher] {
            let t = random_target(&mut rng, arch.num_classes(), loss);
            let err = max_relative_error(&params, &arch, &[(&x[..], &t)], loss, 1.0);
            prop_assert!(err < 1e-4, "{:?} {:?}: {}", arch.layer_sizes(), loss, err);
        }
    }
}
