//! ROC AUC, soft voting and regret normalization.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no inputs")]
    Empty,
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("label {label} is outside the {n_classes} probability columns")]
    LabelOutOfRange { label: usize, n_classes: usize },
}

/// A higher-is-better score, or a marker for an undefined evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    Value(f64),
    Failed,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Failed => None,
        }
    }
}

/// Average ranks (1-based), ties share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

/// Probability that a random positive outscores a random negative, ties 0.5.
/// `None` when either side is empty.
pub fn binary_auc(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// ROC AUC. Two columns score column 1; more columns give the unweighted
/// mean of one-vs-rest AUCs over the classes present in `y`.
pub fn roc_auc(y: &[usize], probs: &Array2<f64>) -> Result<Score, MetricError> {
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    let n_classes = probs.ncols();
    if probs.nrows() != y.len() {
        return Err(MetricError::ShapeMismatch { expected: (y.len(), n_classes), found: probs.dim() });
    }
    if let Some(&label) = y.iter().find(|&&l| l >= n_classes) {
        return Err(MetricError::LabelOutOfRange { label, n_classes });
    }
    let mut present = vec![false; n_classes];
    for &l in y {
        present[l] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Ok(Score::Failed);
    }
    if n_classes == 2 {
        let positive: Vec<bool> = y.iter().map(|&l| l == 1).collect();
        let scores = probs.column(1).to_vec();
        return Ok(binary_auc(&positive, &scores).map_or(Score::Failed, Score::Value));
    }
    let mut total = 0.0;
    let mut count = 0;
    for class in (0..n_classes).filter(|&c| present[c]) {
        let positive: Vec<bool> = y.iter().map(|&l| l == class).collect();
        let scores = probs.column(class).to_vec();
        if let Some(auc) = binary_auc(&positive, &scores) {
            total += auc;
            count += 1;
        }
    }
    Ok(Score::Value(total / count as f64))
}

/// Elementwise mean of equally shaped probability matrices.
pub fn soft_vote(matrices: &[Array2<f64>]) -> Result<Array2<f64>, MetricError> {
    let first = matrices.first().ok_or(MetricError::Empty)?;
    let mut sum = Array2::<f64>::zeros(first.dim());
    for m in matrices {
        if m.dim() != first.dim() {
            return Err(MetricError::ShapeMismatch { expected: first.dim(), found: m.dim() });
        }
        sum += m;
    }
    Ok(sum / matrices.len() as f64)
}

/// Regret normalization for one dataset. `traces[m][t]` is method m's mean
/// incumbent score at grid point t. Each value becomes (max - v) / (max - min)
/// with min and max taken over every method and grid point; a flat dataset
/// maps to zero everywhere.
pub fn minmax_normalize_traces(traces: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MetricError> {
    let values = traces.iter().flatten().copied();
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return Err(MetricError::Empty);
    }
    let span = hi - lo;
    Ok(traces.iter().map(|t| t.iter().map(|&v| if span > 0.0 { (hi - v) / span } else { 0.0 }).collect()).collect())
}

/// Mean and standard error of the mean (sample standard deviation / sqrt(n)).
/// The error is 0 for fewer than two values.
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
