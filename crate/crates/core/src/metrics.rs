//! Classification metrics: balanced accuracy, weighted F1, Cohen's kappa and
//! rank-based AUROC (macro one-vs-rest for more than two classes).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub balanced_accuracy: f64,
    pub auroc: Option<f64>,
    pub weighted_f1: f64,
    pub cohens_kappa: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion_matrix: Vec<Vec<u64>>,
    pub n_eval: usize,
    pub warnings: Vec<String>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for label in [t, p] {
            if label >= n_classes {
                return Err(Error::LabelOutOfRange { label, n_classes });
            }
        }
        cm[t][p] += 1;
    }
    Ok(cm)
}

fn row_sums(cm: &[Vec<u64>]) -> Vec<u64> {
    cm.iter().map(|r| r.iter().sum()).collect()
}

fn col_sums(cm: &[Vec<u64>]) -> Vec<u64> {
    (0..cm.len()).map(|j| cm.iter().map(|r| r[j]).sum()).collect()
}

/// Mean per-class recall over classes present in the evaluation set, plus a
/// warning for each absent class.
pub fn balanced_accuracy(cm: &[Vec<u64>]) -> (f64, Vec<String>) {
    let support = row_sums(cm);
    let mut warnings = Vec::new();
    let mut sum = 0.0;
    let mut present = 0usize;
    for (i, &s) in support.iter().enumerate() {
        if s == 0 {
            warnings.push(format!(
                "class {i} absent from evaluation set; excluded from balanced accuracy"
            ));
            continue;
        }
        sum += cm[i][i] as f64 / s as f64;
        present += 1;
    }
    let ba = if present == 0 { 0.0 } else { sum / present as f64 };
    (ba, warnings)
}

/// Support-weighted mean of per-class F1 (`2tp / (2tp + fp + fn)`, 0 when undefined).
pub fn weighted_f1(cm: &[Vec<u64>]) -> f64 {
    let support = row_sums(cm);
    let predicted = col_sums(cm);
    let n: u64 = support.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..cm.len() {
        let tp = cm[i][i];
        let denom = support[i] + predicted[i];
        if denom > 0 && support[i] > 0 {
            acc += support[i] as f64 * (2 * tp) as f64 / denom as f64;
        }
    }
    acc / n as f64
}

/// `(p_o − p_e)/(1 − p_e)`, evaluated as `(n·Σc_ii − Σr_i c_i)/(n² − Σr_i c_i)`
/// in integers so that chance-level predictors give exactly zero. Returns
/// `None` when every label and prediction is the same class.
pub fn cohens_kappa(cm: &[Vec<u64>]) -> Option<f64> {
    let rows = row_sums(cm);
    let cols = col_sums(cm);
    let n: u128 = rows.iter().map(|&r| r as u128).sum();
    let diag: u128 = (0..cm.len()).map(|i| cm[i][i] as u128).sum();
    let chance: u128 = rows.iter().zip(&cols).map(|(&r, &c)| r as u128 * c as u128).sum();
    let denom = n * n - chance;
    if denom == 0 {
        return None;
    }
    let num = (n * diag) as i128 - chance as i128;
    Some(num as f64 / denom as f64)
}

/// Area under the ROC curve for one positive class, via the Mann–Whitney
/// statistic with midranks for tied scores. `None` without both classes.
pub fn binary_auroc(positive: &[bool], scores: &[f64]) -> Option<f64> {
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
        // Ranks are 1-based; tied block i..=j shares the average rank.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Binary AUROC on the positive-class score, or the macro one-vs-rest mean
/// over classes that have both positives and negatives.
pub fn auroc(y_true: &[usize], scores: &Array2<f64>) -> Option<f64> {
    let n_classes = scores.ncols();
    if n_classes == 2 {
        let pos: Vec<bool> = y_true.iter().map(|&y| y == 1).collect();
        return binary_auroc(&pos, &scores.column(1).to_vec());
    }
    let per_class: Vec<f64> = (0..n_classes)
        .filter_map(|c| {
            let pos: Vec<bool> = y_true.iter().map(|&y| y == c).collect();
            binary_auroc(&pos, &scores.column(c).to_vec())
        })
        .collect();
    if per_class.is_empty() {
        None
    } else {
        Some(per_class.iter().sum::<f64>() / per_class.len() as f64)
    }
}

impl MetricsReport {
    /// Metrics for class scores (`n x n_classes`, e.g. softmax probabilities).
    /// Predictions are the per-row argmax.
    pub fn from_scores(y_true: &[usize], scores: &Array2<f64>) -> Result<Self> {
        if y_true.is_empty() {
            return Err(Error::InvalidArgument("empty evaluation set".into()));
        }
        if scores.nrows() != y_true.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} score rows for {} labels",
                scores.nrows(),
                y_true.len()
            )));
        }
        let y_pred: Vec<usize> = scores.rows().into_iter().map(argmax).collect();
        let mut report = Self::from_predictions(y_true, &y_pred, scores.ncols())?;
        report.auroc = auroc(y_true, scores);
        if report.auroc.is_none() {
            report
                .warnings
                .push("AUROC undefined: no class has both positives and negatives".into());
        }
        Ok(report)
    }

    /// Metrics for hard predictions; AUROC is left undefined.
    pub fn from_predictions(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Self> {
        let cm = confusion_matrix(y_true, y_pred, n_classes)?;
        let (balanced_accuracy, mut warnings) = balanced_accuracy(&cm);
        let cohens_kappa = cohens_kappa(&cm).unwrap_or_else(|| {
            warnings.push("kappa undefined for a single-class set; reported as 0".into());
            0.0
        });
        Ok(MetricsReport {
            balanced_accuracy,
            auroc: None,
            weighted_f1: weighted_f1(&cm),
            cohens_kappa,
            confusion_matrix: cm,
            n_eval: y_true.len(),
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_binary_classifier() {
        let y = [0, 1, 0, 1];
        let s = array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]];
        let r = MetricsReport::from_scores(&y, &s).unwrap();
        assert_eq!(r.balanced_accuracy, 1.0);
        assert_eq!(r.cohens_kappa, 1.0);
        assert_eq!(r.weighted_f1, 1.0);
        assert_eq!(r.auroc, Some(1.0));
        assert_eq!(r.confusion_matrix, vec![vec![2, 0], vec![0, 2]]);
    }

    #[test]
    fn constant_predictor_is_chance() {
        let y = [0, 1, 0, 1, 0, 1];
        let r = MetricsReport::from_predictions(&y, &[1; 6], 2).unwrap();
        assert_eq!(r.balanced_accuracy, 0.5);
        assert_eq!(r.cohens_kappa, 0.0);
        let s = Array2::from_elem((6, 2), 0.5);
        let r = MetricsReport::from_scores(&y, &s).unwrap();
        assert_eq!(r.auroc, Some(0.5));
        assert_eq!(r.cohens_kappa, 0.0);
    }

    #[test]
    fn absent_class_excluded_with_warning() {
        let r = MetricsReport::from_predictions(&[0, 0, 1], &[0, 1, 1], 3).unwrap();
        assert_eq!(r.balanced_accuracy, (0.5 + 1.0) / 2.0);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].contains("class 2"));
    }

    #[test]
    fn out_of_range_labels_rejected() {
        assert!(matches!(
            MetricsReport::from_predictions(&[0, 3], &[0, 1], 2),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn midranks_handle_ties() {
        // Pairs (pos, neg): (0.5, 0.5) ties count half.
        let a = binary_auroc(&[true, false, true, false], &[0.5, 0.5, 0.9, 0.1]).unwrap();
        assert_eq!(a, (1.0 + 1.0 + 1.0 + 0.5) / 4.0);
    }

    #[test]
    fn metrics_invariant_under_permutation() {
        let y = [0, 1, 2, 1, 0, 2, 2];
        let s = array![
            [0.5, 0.3, 0.2],
            [0.1, 0.6, 0.3],
            [0.3, 0.3, 0.4],
            [0.4, 0.4, 0.2],
            [0.2, 0.2, 0.6],
            [0.3, 0.5, 0.2],
            [0.1, 0.1, 0.8]
        ];
        let a = MetricsReport::from_scores(&y, &s).unwrap();
        let perm = [6, 2, 4, 0, 5, 1, 3];
        let y2: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
        let s2 = s.select(ndarray::Axis(0), &perm);
        let b = MetricsReport::from_scores(&y2, &s2).unwrap();
        assert_eq!(a, b);
    }
}
