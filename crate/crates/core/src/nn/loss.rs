use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    WeightedCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<Vec<f64>>,
}

impl LossSpec {
    pub fn cross_entropy() -> Self {
        Self { kind: LossKind::CrossEntropy, class_weights: None }
    }

    pub fn weighted(class_weights: Vec<f64>) -> Result<Self> {
        let spec = Self { kind: LossKind::WeightedCrossEntropy, class_weights: Some(class_weights) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.class_weights) {
            (LossKind::CrossEntropy, None) => Ok(()),
            (LossKind::CrossEntropy, Some(_)) => {
                Err(Error::Config("class_weights given for unweighted cross-entropy".into()))
            }
            (LossKind::WeightedCrossEntropy, None) => {
                Err(Error::Config("weighted cross-entropy requires class_weights".into()))
            }
            (LossKind::WeightedCrossEntropy, Some(w)) => {
                if w.iter().all(|&x| x > 0.0 && x.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::Config("class weights must be positive".into()))
                }
            }
        }
    }

    fn weight_for(&self, label: usize, classes: usize) -> Result<f64> {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        match &self.class_weights {
            None => Ok(1.0),
            Some(w) if w.len() == classes => Ok(w[label]),
            Some(w) => Err(Error::dims(classes, w.len(), "class weight vector")),
        }
    }
}

/// Cross-entropy of `softmax(logits)` against `label`, with its gradient
/// with respect to the logits.
pub fn loss_and_grad<T: Real>(spec: &LossSpec, logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    let w = T::real(spec.weight_for(label, logits.len())?);
    let mut p = softmax(logits);
    // -ln p_label, computed from the log-sum-exp form to avoid ln(0).
    let max = logits.iter().copied().fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    let loss = w * (lse - logits[label]);
    p[label] -= T::one();
    for g in &mut p {
        *g *= w;
    }
    Ok((loss, p))
}

/// Mean loss over a batch (one sample per row) and the gradient of that mean
/// with respect to the logits.
pub fn batch_loss_and_grad<T: Real>(
    spec: &LossSpec,
    logits: ArrayView2<T>,
    labels: &[usize],
) -> Result<(T, Array2<T>)> {
    if logits.nrows() != labels.len() {
        return Err(Error::dims(logits.nrows(), labels.len(), "batch labels"));
    }
    let n = T::real(labels.len().max(1) as f64);
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = T::zero();
    for (i, (row, &label)) in logits.rows().into_iter().zip(labels).enumerate() {
        let row = row.to_vec();
        let (l, g) = loss_and_grad(spec, &row, label)?;
        total += l;
        for (k, gk) in g.into_iter().enumerate() {
            grad[[i, k]] = gk / n;
        }
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 3, 12] {
            let logits = vec![0.3f64; k];
            for label in 0..k {
                let (loss, grad) = loss_and_grad(&LossSpec::cross_entropy(), &logits, label).unwrap();
                assert!((loss - (k as f64).ln()).abs() < 1e-12);
                assert_eq!(grad.len(), k);
            }
        }
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let logits = [100.0f64, 0.0, -50.0];
        let (loss, _) = loss_and_grad(&LossSpec::cross_entropy(), &logits, 0).unwrap();
        assert!((0.0..1e-30).contains(&loss));
    }

    #[test]
    fn weighted_loss_scales_with_true_class_weight() {
        let logits = [0.2f64, -1.3, 2.1];
        let plain = loss_and_grad(&LossSpec::cross_entropy(), &logits, 1).unwrap();
        let spec = LossSpec::weighted(vec![1.0, 2.0, 1.0]).unwrap();
        let weighted = loss_and_grad(&spec, &logits, 1).unwrap();
        assert_eq!(weighted.0, 2.0 * plain.0);
        for (a, b) in weighted.1.iter().zip(&plain.1) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn unit_weights_match_unweighted_exactly() {
        let logits = [0.7f32, -0.1, 0.4, 3.0];
        let spec = LossSpec::weighted(vec![1.0; 4]).unwrap();
        for label in 0..4 {
            let a = loss_and_grad(&spec, &logits, label).unwrap();
            let b = loss_and_grad(&LossSpec::cross_entropy(), &logits, label).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let err = loss_and_grad(&LossSpec::cross_entropy(), &[0.0f64, 1.0], 2).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 2, classes: 2 }));
    }

    #[test]
    fn spec_validation() {
        assert!(LossSpec::weighted(vec![1.0, 0.0]).is_err());
        let bad = LossSpec { kind: LossKind::WeightedCrossEntropy, class_weights: None };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(v in prop::collection::vec(-700.0f64..700.0, 1..20)) {
            let p = softmax(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn loss_is_nonnegative(v in prop::collection::vec(-50.0f64..50.0, 2..10), l in 0usize..10) {
            let label = l % v.len();
            let (loss, grad) = loss_and_grad(&LossSpec::cross_entropy(), &v, label).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert!(grad.iter().sum::<f64>().abs() < 1e-9);
        }
    }
}
