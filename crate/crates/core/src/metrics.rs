//! Classification metrics: accuracy, one-vs-rest ROC AUC, per-class recall
//! and confusion matrices.

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;

/// Fraction of positions where `predicted == labels`.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64, MetricsError> {
    if predicted.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Area under the ROC curve for one binary problem, or `None` when either
/// class is absent. Tied scores count one half.
///
/// ```
/// use gcec::metrics::binary_auc;
/// let auc = binary_auc(&[0.8, 0.35, 0.1, 0.4], &[true, true, false, false]);
/// assert_eq!(auc, Some(0.75));
/// ```
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Rank-sum form: each run of tied scores shares the midpoint rank.
    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 1) as f64 / 2.0;
        let pos_in_run = order[start..end].iter().filter(|&&i| positive[i]).count();
        pos_rank_sum += mid_rank * pos_in_run as f64;
        start = end;
    }
    let p = n_pos as f64;
    Some((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// `None` for classes with no positives or no negatives.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the defined classes; `None` when none is defined.
    pub macro_avg: Option<f64>,
}

/// One-vs-rest AUC of every class against the rest; `scores` holds one row
/// of class scores per sample.
pub fn roc_auc_ovr<R: AsRef<[f64]>>(scores: &[R], labels: &[usize]) -> Result<AucReport, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let k = scores[0].as_ref().len();
    if k == 0 || scores.iter().any(|r| r.as_ref().len() != k) || labels.iter().any(|&l| l >= k) {
        return Err(MetricsError::ScoreShape {
            rows: scores.len(),
            cols: k,
            labels: labels.len(),
        });
    }
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let col: Vec<f64> = scores.iter().map(|r| r.as_ref()[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            binary_auc(&col, &pos)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_avg = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(AucReport { per_class, macro_avg })
}

/// `matrix[true][predicted]` counts.
pub fn confusion_matrix(predicted: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>, MetricsError> {
    if predicted.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), labels.len()));
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &l) in predicted.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(MetricsError::ScoreShape {
                rows: predicted.len(),
                cols: n_classes,
                labels: labels.len(),
            });
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Recall of each class from a confusion matrix; `None` for classes with no
/// true samples.
pub fn per_class_recall(confusion: &[Vec<u64>]) -> Vec<Option<f64>> {
    confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_example() {
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert_eq!(accuracy(&[], &[]), Err(MetricsError::Empty));
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(binary_auc(&[0.9, 0.1], &[true, false]), Some(1.0));
        assert_eq!(binary_auc(&[0.1, 0.9], &[true, false]), Some(0.0));
        assert_eq!(binary_auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(binary_auc(&[0.5, 0.7], &[true, true]), None);
    }

    #[test]
    fn ovr_skips_absent_class() {
        let scores = [[0.9, 0.1, 0.0], [0.2, 0.8, 0.0], [0.6, 0.4, 0.0]];
        let r = roc_auc_ovr(&scores, &[0, 1, 0]).unwrap();
        assert_eq!(r.per_class, vec![Some(1.0), Some(1.0), None]);
        assert_eq!(r.macro_avg, Some(1.0));
    }

    #[test]
    fn ovr_shape_errors() {
        assert!(roc_auc_ovr(&[[0.1, 0.9]], &[2]).is_err());
        assert!(roc_auc_ovr::<[f64; 2]>(&[], &[]).is_err());
    }

    #[test]
    fn confusion_and_recall() {
        let m = confusion_matrix(&[0, 1, 1, 0], &[0, 1, 0, 0], 3).unwrap();
        assert_eq!(m, vec![vec![2, 1, 0], vec![0, 1, 0], vec![0, 0, 0]]);
        assert_eq!(per_class_recall(&m), vec![Some(2.0 / 3.0), Some(1.0), None]);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
