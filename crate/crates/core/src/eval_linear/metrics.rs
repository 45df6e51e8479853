use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Percent, `[0, 100]`.
    pub top1_acc: f64,
    /// Macro one-vs-rest area under the ROC curve.
    pub auc: f64,
    pub f1_macro: Option<f64>,
    pub per_class: BTreeMap<String, ClassStats>,
}

/// Area under the ROC curve via the rank-sum statistic; tied scores count one
/// half. Returns `None` when either class is absent.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// ROC curve points `(fpr, tpr, threshold)` for one class, thresholds descending.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64, f64)> {
    let n_pos = positive.iter().filter(|&&p| p).count().max(1) as f64;
    let n_neg = (positive.len() - positive.iter().filter(|&&p| p).count()).max(1) as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(0.0, 0.0, f64::INFINITY)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        pts.push((fp / n_neg, tp / n_pos, s));
    }
    pts
}

pub fn confusion_matrix(pred: &[usize], labels: &[usize], k: usize) -> Array2<usize> {
    let mut m = Array2::zeros((k, k));
    for (&p, &l) in pred.iter().zip(labels) {
        m[[l, p]] += 1;
    }
    m
}

/// Top-1 accuracy, macro one-vs-rest AUC, macro F1 and per-class
/// precision/recall from an `N × K` score matrix.
pub fn compute_metrics(scores: &Array2<f64>, labels: &[usize], class_names: &[String]) -> Result<MetricsRecord> {
    let k = scores.ncols();
    if k < 2 {
        return Err(Error::SingleClass(format!("score matrix has {k} column(s)")));
    }
    if scores.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} score rows vs {} labels", scores.nrows(), labels.len())));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("scores must be finite".into()));
    }
    let pred = pathbt_nn::loss::argmax_rows(scores);
    let n = labels.len().max(1) as f64;
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64;
    let mut aucs = Vec::new();
    let mut per_class = BTreeMap::new();
    let mut f1s = Vec::new();
    let cm = confusion_matrix(&pred, labels, k);
    for c in 0..k {
        let col: Vec<f64> = scores.column(c).to_vec();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if let Some(a) = binary_auc(&col, &pos) {
            aucs.push(a);
        }
        let tp = cm[[c, c]] as f64;
        let predicted = cm.column(c).sum() as f64;
        let actual = cm.row(c).sum() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        if actual > 0.0 {
            f1s.push(f1);
        }
        let name = class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
        per_class.insert(name, ClassStats { precision, recall });
    }
    let auc = if aucs.is_empty() { 0.5 } else { aucs.iter().sum::<f64>() / aucs.len() as f64 };
    let f1_macro = (!f1s.is_empty()).then(|| f1s.iter().sum::<f64>() / f1s.len() as f64);
    Ok(MetricsRecord { top1_acc: 100.0 * correct / n, auc, f1_macro, per_class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    /// Pairwise oracle: fraction of (pos, neg) pairs ranked correctly, ties 1/2.
    fn pairwise_auc(scores: &[f64], positive: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if positive[i] && !positive[j] {
                    den += 1.0;
                    num += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn four_sample_hand_case() {
        let s = [0.9, 0.8, 0.3, 0.1];
        let p = [true, false, true, false];
        assert_eq!(binary_auc(&s, &p), Some(0.75));
        assert_eq!(pairwise_auc(&s, &p), 0.75);
        let scores = array![[0.1, 0.9], [0.2, 0.8], [0.7, 0.3], [0.9, 0.1]];
        let m = compute_metrics(&scores, &[1, 0, 1, 0], &["a".into(), "b".into()]).unwrap();
        assert_eq!(m.auc, 0.75);
    }

    #[test]
    fn perfect_and_constant_scores() {
        let labels = [0, 1, 2, 1, 0];
        let perfect = crate::eval_linear::metrics::tests::one_hot(&labels, 3);
        let m = compute_metrics(&perfect, &labels, &[]).unwrap();
        assert_eq!((m.top1_acc, m.auc), (100.0, 1.0));
        assert_eq!(m.f1_macro, Some(1.0));
        let constant = Array2::from_elem((5, 3), 0.2);
        assert_eq!(compute_metrics(&constant, &labels, &[]).unwrap().auc, 0.5);
    }

    pub(super) fn one_hot(labels: &[usize], k: usize) -> Array2<f64> {
        pathbt_nn::loss::one_hot(labels, k)
    }

    #[test]
    fn single_column_rejected() {
        assert!(compute_metrics(&Array2::zeros((3, 1)), &[0, 0, 0], &[]).is_err());
    }

    #[test]
    fn roc_ends_at_one_one() {
        let pts = roc_curve(&[0.9, 0.8, 0.3, 0.1], &[true, false, true, false]);
        assert_eq!(*pts.last().unwrap(), (1.0, 1.0, 0.1));
        assert_eq!(pts[0].0, 0.0);
    }

    proptest! {
        #[test]
        fn rank_auc_matches_pairwise_oracle(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 7.0).collect();
            let pos: Vec<bool> = data.iter().map(|(_, p)| *p).collect();
            match binary_auc(&scores, &pos) {
                Some(a) => prop_assert_eq!(a, pairwise_auc(&scores, &pos)),
                None => prop_assert!(pos.iter().all(|&p| p) || pos.iter().all(|&p| !p)),
            }
        }
    }
}
