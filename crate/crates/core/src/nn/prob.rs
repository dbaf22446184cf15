use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Probabilities are floored at this value before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on `Σ p = 1` accepted by [`ProbVector::new`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A categorical distribution over `C` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("empty probability vector"));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::domain(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::domain(format!("probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    /// One-hot distribution at `class`.
    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::domain(format!(
                "class {class} out of range for {num_classes} classes"
            )));
        }
        let mut v = vec![0.0; num_classes];
        v[class] = 1.0;
        Ok(Self(v))
    }

    pub fn uniform(num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::domain("uniform distribution over zero classes"));
        }
        Ok(Self(vec![1.0 / num_classes as f64; num_classes]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbVector::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Tempered softmax, `exp(z_c / τ) / Σ_j exp(z_j / τ)`, evaluated with max-subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::domain("softmax of an empty logit vector"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::domain("non-finite logit"));
    }
    Ok(ProbVector(softmax_unchecked(logits, temperature)))
}

pub(crate) fn softmax_unchecked(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits
        .iter()
        .map(|z| ((z - max) / temperature).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.iter_mut().for_each(|e| *e /= sum);
    exps
}

fn check_lengths(a: &ProbVector, b: &ProbVector) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "distribution lengths differ: {} vs {}",
            a.len(),
            b.len()
        )))
    }
}

/// `H(q, p) = Σ −q(c) ln p(c)` with `p` floored at [`PROB_FLOOR`].
pub fn cross_entropy(q: &ProbVector, p: &ProbVector) -> Result<f64> {
    check_lengths(q, p)?;
    Ok(cross_entropy_raw(q.as_slice(), p.as_slice()))
}

pub(crate) fn cross_entropy_raw(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(&qc, _)| qc > 0.0)
        .map(|(&qc, &pc)| -qc * pc.max(PROB_FLOOR).ln())
        .sum()
}

/// `KL(teacher ‖ student) = Σ t(c) ln(t(c) / s(c))`, student floored at [`PROB_FLOOR`].
/// Terms with `t(c) = 0` contribute nothing.
pub fn kl_divergence(teacher: &ProbVector, student: &ProbVector) -> Result<f64> {
    check_lengths(teacher, student)?;
    Ok(kl_divergence_raw(teacher.as_slice(), student.as_slice()))
}

pub(crate) fn kl_divergence_raw(t: &[f64], s: &[f64]) -> f64 {
    let kl: f64 = t
        .iter()
        .zip(s)
        .filter(|(&tc, _)| tc > 0.0)
        .map(|(&tc, &sc)| tc * (tc.ln() - sc.max(PROB_FLOOR).ln()))
        .sum();
    // Rounding can leave a tiny negative value when teacher == student.
    kl.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for &x in p.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        // exp(k) / (e + e^2 + e^3), evaluated independently.
        let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let expected = [1f64.exp() / denom, 2f64.exp() / denom, 3f64.exp() / denom];
        let p = softmax(&[1.0, 2.0, 3.0], 1.0).unwrap();
        for (a, b) in p.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p[0] - 0.0900).abs() < 5e-5);
        assert!((p[1] - 0.2447).abs() < 5e-5);
        assert!((p[2] - 0.6652).abs() < 5e-5);

        let p = softmax(&[1000.0, 0.0, 0.0], 1.0).unwrap();
        assert!(p.as_slice().iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(matches!(softmax(&[1.0, 2.0], 0.0), Err(Error::Domain(_))));
        assert!(matches!(softmax(&[1.0, 2.0], -1.0), Err(Error::Domain(_))));
        assert!(softmax(&[1.0, f64::NAN], 1.0).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(
            cross_entropy(&pv(&[0.0, 1.0]), &pv(&[0.0, 1.0])).unwrap(),
            0.0
        );
        let ln2 = 2f64.ln();
        assert!((cross_entropy(&pv(&[1.0, 0.0]), &pv(&[0.5, 0.5])).unwrap() - ln2).abs() < 1e-15);
        assert!((cross_entropy(&pv(&[0.5, 0.5]), &pv(&[0.5, 0.5])).unwrap() - ln2).abs() < 1e-15);
        assert!(matches!(
            cross_entropy(&pv(&[1.0]), &pv(&[0.5, 0.5])),
            Err(Error::Shape(_))
        ));
        // Saturated prediction stays finite thanks to the floor.
        let ce = cross_entropy(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap();
        assert!((ce - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn kl_examples() {
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let kl = kl_divergence(&pv(&[0.5, 0.5]), &pv(&[0.9, 0.1])).unwrap();
        assert!((kl - expected).abs() < 1e-15);
        assert!((kl - 0.5108).abs() < 5e-5);
        for c in 2..8 {
            let kl = kl_divergence(
                &ProbVector::one_hot(1, c).unwrap(),
                &ProbVector::uniform(c).unwrap(),
            )
            .unwrap();
            assert!((kl - (c as f64).ln()).abs() < 1e-12);
        }
        assert!(kl_divergence(&pv(&[1.0]), &pv(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.1, -0.1]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
        assert!(ProbVector::one_hot(2, 2).is_err());
        let json = serde_json::to_string(&pv(&[0.25, 0.75])).unwrap();
        assert_eq!(json, "[0.25,0.75]");
        assert!(serde_json::from_str::<ProbVector>("[0.2,0.2]").is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    fn logits() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 2..12)
    }

    fn distribution() -> impl Strategy<Value = ProbVector> {
        prop::collection::vec(0.0f64..1.0, 2..10).prop_filter_map("zero mass", |raw| {
            let s: f64 = raw.iter().sum();
            (s > 1e-6).then(|| {
                let v: Vec<f64> = raw.iter().map(|x| x / s).collect();
                ProbVector::new(v).ok()
            })?
        })
    }

    proptest! {
        #[test]
        fn softmax_is_valid_and_shift_invariant(z in logits(), shift in -100.0f64..100.0, tau in 0.05f64..10.0) {
            let p = softmax(&z, tau).unwrap();
            prop_assert!(ProbVector::new(p.as_slice().to_vec()).is_ok());
            prop_assert_eq!(p.argmax(), argmax(&z));
            let shifted: Vec<f64> = z.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted, tau).unwrap();
            for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn kl_is_nonnegative_and_zero_on_identity(t in distribution(), s in distribution()) {
            prop_assert!(kl_divergence(&t, &t).unwrap().abs() <= 1e-9);
            if t.len() == s.len() {
                prop_assert!(kl_divergence(&t, &s).unwrap() >= 0.0);
            }
        }
    }
}
