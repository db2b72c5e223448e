use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Mlp;
use crate::scalar::Scalar;

/// Fraction of samples with `y f(x) > 0`. A zero score counts as an error.
pub fn accuracy<T: Scalar>(scores: &[T], labels: &[T]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let correct = scores.iter().zip(labels).filter(|(s, y)| **s * **y > T::zero()).count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Area under the ROC curve as the Mann-Whitney statistic, with half credit
/// for tied scores.
pub fn auc<T: Scalar>(scores: &[T], labels: &[T]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Evaluation("AUC requires finite scores".into()));
    }
    let n_pos = labels.iter().filter(|y| **y > T::zero()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    // sum of average ranks (1-based) of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] > T::zero()).count();
        rank_sum += avg_rank * pos_in_group as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

fn check_lengths(scores: usize, labels: usize) -> Result<()> {
    if scores == 0 {
        return Err(Error::EmptyRequest("metrics on an empty split"));
    }
    if scores != labels {
        return Err(Error::Shape(format!("{scores} scores but {labels} labels")));
    }
    Ok(())
}

/// Accuracy, AUC and mean margin of a model on one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` when the split holds a single class.
    pub auc: Option<f64>,
    pub mean_margin: f64,
}

pub fn evaluate<T: Scalar>(model: &Mlp<T>, x: ArrayView2<T>, y: ArrayView1<T>) -> Result<Metrics> {
    let scores = model.predict(x)?;
    let scores = scores.as_slice().ok_or_else(|| Error::Internal("non-contiguous scores".into()))?;
    let labels = y.to_vec();
    let accuracy = accuracy(scores, &labels)?;
    let auc = match auc(scores, &labels) {
        Ok(a) => Some(a),
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    let mean_margin = scores
        .iter()
        .zip(&labels)
        .map(|(s, y)| (*s * *y).to_f64_lossy())
        .sum::<f64>()
        / labels.len() as f64;
    Ok(Metrics {
        accuracy,
        auc,
        mean_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        assert_eq!(accuracy(&[1.0, -1.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, -1.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.0, 0.0, 0.0], &[1.0, -1.0, 1.0]).unwrap(), 0.0);
        let s = [0.9, 0.1, 0.8, 0.3];
        let y = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(auc(&s, &y).unwrap(), 1.0);
        assert_eq!(accuracy(&s, &y).unwrap(), 0.5);
        assert_eq!(auc(&[0.5, 0.5], &[1.0, -1.0]).unwrap(), 0.5);
    }

    #[test]
    fn errors() {
        assert!(matches!(auc(&[1.0, 2.0], &[1.0, 1.0]), Err(Error::SingleClass)));
        assert!(matches!(accuracy::<f64>(&[], &[]), Err(Error::EmptyRequest(_))));
        assert!(matches!(accuracy(&[1.0], &[1.0, 1.0]), Err(Error::Shape(_))));
    }

    /// Direct O(n^2) pair count.
    fn auc_pairs(s: &[f64], y: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] > 0.0 && y[j] < 0.0 {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count(
            pts in prop::collection::vec((0i32..6, any::<bool>()), 2..40)
        ) {
            let s: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pts.iter().map(|p| if p.1 { 1.0 } else { -1.0 }).collect();
            prop_assume!(y.iter().any(|v| *v > 0.0) && y.iter().any(|v| *v < 0.0));
            prop_assert!((auc(&s, &y).unwrap() - auc_pairs(&s, &y)).abs() < 1e-12);
        }
    }
}
