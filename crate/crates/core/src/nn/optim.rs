use serde::{Deserialize, Serialize};

use super::{GradientSet, ParameterSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer with its running state.
///
/// Adam moments are allocated on the first step, shaped like the gradients it sees.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::domain(format!(
                "learning rate must be non-negative, got {lr}"
            )));
        }
        Ok(Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &GradientSet) -> Result<()> {
        grads.check_shape(params)?;
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = self.lr;
                for (p, g) in params.values_mut().iter_mut().zip(grads.values()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != grads.len() {
                    if self.step > 1 {
                        return Err(Error::shape("Adam state does not match gradient size"));
                    }
                    self.m = vec![0.0; grads.len()];
                    self.v = vec![0.0; grads.len()];
                }
                let t = self.step as i32;
                let bias1 = 1.0 - self.beta1.powi(t);
                let bias2 = 1.0 - self.beta2.powi(t);
                let values = params.values_mut();
                for (i, &g) in grads.values().iter().enumerate() {
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = self.m[i] / bias1;
                    let v_hat = self.v[i] / bias2;
                    values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(values: &[f64]) -> ParameterSet {
        ParameterSet::from_values(vec![1, 2], values.to_vec()).unwrap()
    }

    fn grads(values: &[f64]) -> GradientSet {
        GradientSet::from_values(vec![1, 2], values.to_vec()).unwrap()
    }

    #[test]
    fn sgd_zero_rate_is_identity() {
        let mut p = params(&[0.3, -1.2, 5.0, 0.1]);
        let before = p.clone();
        Optimizer::sgd(0.0)
            .unwrap()
            .step(&mut p, &grads(&[1.0, 2.0, 3.0, 4.0]))
            .unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_unit_rate_on_self_gradient_zeroes() {
        let v = [0.3, -1.2, 5.0, 0.1];
        let mut p = params(&v);
        Optimizer::sgd(1.0)
            .unwrap()
            .step(&mut p, &grads(&v))
            .unwrap();
        assert!(p.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sgd_zero_gradient_bitwise_unchanged() {
        let mut p = params(&[0.1, -0.0, 1e-300, 7.5]);
        let before: Vec<u64> = p.values().iter().map(|x| x.to_bits()).collect();
        Optimizer::sgd(0.7)
            .unwrap()
            .step(&mut p, &grads(&[0.0; 4]))
            .unwrap();
        let after: Vec<u64> = p.values().iter().map(|x| x.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // With m̂ = g and v̂ = g² the first update is lr · g / (|g| + ε).
        let lr = 1e-3;
        let g = [0.5, -2.0, 3.0, 1e-2];
        let mut p = params(&[0.0; 4]);
        Optimizer::adam(lr)
            .unwrap()
            .step(&mut p, &grads(&g))
            .unwrap();
        for (x, gi) in p.values().iter().zip(g) {
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert!((x - expected).abs() < 1e-15);
            assert!((x.abs() - lr).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = params(&[0.0; 4]);
        let g = GradientSet::from_values(vec![2, 1], vec![0.0; 3]).unwrap();
        assert!(matches!(
            Optimizer::sgd(0.1).unwrap().step(&mut p, &g),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn negative_rate_is_rejected() {
        assert!(Optimizer::sgd(-0.1).is_err());
        assert!(Optimizer::adam(f64::NAN).is_err());
    }
}
