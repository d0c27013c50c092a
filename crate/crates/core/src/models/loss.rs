use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to the true-class probability before taking its log.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// A probability vector over the model's classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    probabilities: Vec<f64>,
}

impl ClassDistribution {
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.probabilities[class]
    }

    /// Most probable class; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate().skip(1) {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }
}

/// Numerically stable softmax (the maximum logit is subtracted first).
pub fn softmax(logits: &[f64]) -> ClassDistribution {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ClassDistribution {
        probabilities: exps.into_iter().map(|e| e / sum).collect(),
    }
}

/// `−w[y] · ln max(p[y], 1e-12)`.
pub fn weighted_cross_entropy(
    distribution: &ClassDistribution,
    true_class: usize,
    class_weights: &[f64],
) -> Result<f64> {
    if class_weights.len() != distribution.len() {
        return Err(Error::Dimension {
            expected: distribution.len(),
            got: class_weights.len(),
        });
    }
    if class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::invalid("class weights must be positive"));
    }
    if true_class >= distribution.len() {
        return Err(Error::invalid(format!("class {true_class} out of range")));
    }
    let p = distribution.get(true_class);
    if p.is_nan() {
        return Ok(f64::NAN);
    }
    let p = p.max(PROBABILITY_FLOOR);
    Ok(-class_weights[true_class] * p.ln())
}

/// Inverse-frequency weights `N / (K · n_c)`, so that `Σ n_c · w_c = N`.
pub fn class_weights(label_counts: &[usize]) -> Result<Vec<f64>> {
    if label_counts.is_empty() {
        return Err(Error::Empty("label counts"));
    }
    if let Some(c) = label_counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!(
            "class {c} has no examples; drop empty classes before weighting"
        )));
    }
    let total: usize = label_counts.iter().sum();
    let k = label_counts.len() as f64;
    Ok(label_counts
        .iter()
        .map(|&n| total as f64 / (k * n as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let d = softmax(&[0.0, 0.0, 0.0]);
        for p in d.probabilities() {
            assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_handles_large_logits() {
        let d = softmax(&[1000.0, 0.0]);
        assert_eq!(d.probabilities(), [1.0, 0.0]);
    }

    #[test]
    fn argmax_tie_goes_low() {
        assert_eq!(softmax(&[1.0, 1.0, 0.0]).argmax(), 0);
        assert_eq!(softmax(&[0.0, 2.0, 2.0]).argmax(), 1);
    }

    #[test]
    fn cross_entropy_cases() {
        let perfect = softmax(&[0.0, -1e6]);
        assert_eq!(
            weighted_cross_entropy(&perfect, 0, &[1.0, 1.0]).unwrap(),
            0.0
        );

        let uniform = softmax(&[0.0; 3]);
        let l = weighted_cross_entropy(&uniform, 1, &[1.0; 3]).unwrap();
        assert_abs_diff_eq!(l, 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(l, 1.0986, epsilon = 1e-4);

        let doubled = weighted_cross_entropy(&uniform, 1, &[1.0, 2.0, 1.0]).unwrap();
        assert_abs_diff_eq!(doubled, 2.0 * l, epsilon = 1e-15);

        assert!(weighted_cross_entropy(&uniform, 0, &[1.0, 0.0, 1.0]).is_err());
        assert!(weighted_cross_entropy(&uniform, 0, &[1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn probability_floor() {
        let d = softmax(&[0.0, -1e4]);
        let l = weighted_cross_entropy(&d, 1, &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(l, -(1e-12f64).ln(), epsilon = 1e-9);
    }

    #[test]
    fn weight_formula() {
        assert_eq!(class_weights(&[10, 10, 10]).unwrap(), vec![1.0, 1.0, 1.0]);
        let w = class_weights(&[30, 10, 20]).unwrap();
        assert_abs_diff_eq!(w[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 1.0, epsilon = 1e-15);
        assert!(class_weights(&[3, 0]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(logits in proptest::collection::vec(-50.0f64..50.0, 2..6)) {
            let d = softmax(&logits);
            prop_assert!((d.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(d.probabilities().iter().all(|p| (0.0..=1.0).contains(p)));
        }

        #[test]
        fn softmax_shift_invariance(logits in proptest::collection::vec(-20.0f64..20.0, 2..6), c in -100.0f64..100.0) {
            let a = softmax(&logits);
            let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
            let b = softmax(&shifted);
            for (x, y) in a.probabilities().iter().zip(b.probabilities()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn weighted_counts_sum_to_total(counts in proptest::collection::vec(1usize..500, 2..4)) {
            let w = class_weights(&counts).unwrap();
            let total: usize = counts.iter().sum();
            let weighted: f64 = counts.iter().zip(&w).map(|(&n, w)| n as f64 * w).sum();
            prop_assert!((weighted - total as f64).abs() < 1e-9 * total as f64);
        }
    }
}
