//! Multi-label evaluation metrics.
//!
//! "Accuracy" is cell-wise (Hamming) accuracy and "F1" is macro-F1, both at
//! a decision threshold (0.5 unless stated). ROC-AUC is computed per class
//! from midranks, which equals counting concordant positive/negative pairs
//! with ties worth one half.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use crate::corpus::InstrumentClass;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub const REPORT_DEFINITIONS: &str = "accuracy: cell-wise (Hamming) accuracy over all (sample, class) cells at `threshold`; \
f1: macro-F1 at `threshold` over classes with at least one positive label; \
roc_auc: per-class pair-counting AUC (ties = 1/2) averaged as `roc_auc_averaging`, classes lacking positives or negatives excluded";

/// Scores in `[0, 1]` and binary labels, both `[N x C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBatch {
    scores: Array2<f64>,
    labels: Array2<u8>,
}

impl EvalBatch {
    pub fn new(scores: Array2<f64>, labels: Array2<u8>) -> Result<Self> {
        if scores.dim() != labels.dim() {
            return Err(Error::ShapeMismatch(format!(
                "scores {:?} vs labels {:?}",
                scores.dim(),
                labels.dim()
            )));
        }
        if scores.iter().any(|s| !(s.is_finite() && (0.0..=1.0).contains(s))) {
            return Err(Error::invalid("scores must be finite and lie in [0, 1]"));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    pub fn n_samples(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.scores.ncols()
    }

    fn non_empty(&self) -> Result<()> {
        if self.scores.is_empty() {
            Err(Error::EmptyBatch)
        } else {
            Ok(())
        }
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold {t} outside (0, 1)")))
    }
}

pub fn hamming_accuracy(batch: &EvalBatch, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    batch.non_empty()?;
    let correct = batch
        .scores
        .iter()
        .zip(batch.labels.iter())
        .filter(|(&s, &y)| (s >= threshold) == (y == 1))
        .count();
    Ok(correct as f64 / batch.scores.len() as f64)
}

pub fn per_label_accuracy(batch: &EvalBatch, threshold: f64) -> Result<Vec<f64>> {
    check_threshold(threshold)?;
    batch.non_empty()?;
    let n = batch.n_samples() as f64;
    Ok(batch
        .scores
        .columns()
        .into_iter()
        .zip(batch.labels.columns())
        .map(|(s, y)| {
            s.iter()
                .zip(y.iter())
                .filter(|(&s, &y)| (s >= threshold) == (y == 1))
                .count() as f64
                / n
        })
        .collect())
}

/// AUC of one score column, or `None` if the column lacks positives or
/// negatives.
pub fn auc_binary(scores: ArrayView1<f64>, labels: ArrayView1<u8>) -> Option<f64> {
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of midranks of positives, doubled to stay integral.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, midrank (i + j + 2) / 2
        let doubled_midrank = (i + j + 2) as u64;
        let tied_positives = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        doubled_rank_sum += doubled_midrank * tied_positives;
        i = j + 1;
    }
    let p = positives as u64;
    // (concordant + ties/2) = rank_sum - p(p+1)/2; everything doubled.
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Some(doubled_u as f64 / 2.0 / (positives * negatives) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AucSummary {
    pub value: f64,
    pub per_class: Vec<Option<f64>>,
    /// Classes with no positive or no negative example.
    pub excluded: Vec<usize>,
}

pub fn roc_auc_per_class(batch: &EvalBatch) -> Result<AucSummary> {
    batch.non_empty()?;
    let per_class: Vec<Option<f64>> = batch
        .scores
        .columns()
        .into_iter()
        .zip(batch.labels.columns())
        .map(|(s, y)| auc_binary(s, y))
        .collect();
    let excluded: Vec<usize> = per_class
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_none())
        .map(|(i, _)| i)
        .collect();
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::NoEvaluableClass);
    }
    let value = valid.iter().sum::<f64>() / valid.len() as f64;
    Ok(AucSummary {
        value,
        per_class,
        excluded,
    })
}

pub fn roc_auc_macro(batch: &EvalBatch) -> Result<f64> {
    Ok(roc_auc_per_class(batch)?.value)
}

/// AUC over all cells pooled into one binary problem.
pub fn roc_auc_micro(batch: &EvalBatch) -> Result<f64> {
    batch.non_empty()?;
    let scores = ndarray::Array1::from_iter(batch.scores.iter().copied());
    let labels = ndarray::Array1::from_iter(batch.labels.iter().copied());
    auc_binary(scores.view(), labels.view()).ok_or(Error::NoEvaluableClass)
}

/// Macro-F1 over classes with at least one positive label; per class
/// `2TP / (2TP + FP + FN)`.
pub fn f1_macro(batch: &EvalBatch, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    batch.non_empty()?;
    let mut scores = Vec::new();
    for (s, y) in batch.scores.columns().into_iter().zip(batch.labels.columns()) {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&s, &y) in s.iter().zip(y.iter()) {
            match (s >= threshold, y == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        if tp + fn_ == 0 {
            continue;
        }
        let denom = 2 * tp + fp + fn_;
        scores.push(if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 });
    }
    if scores.is_empty() {
        return Err(Error::NoEvaluableClass);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn threshold_sweep(batch: &EvalBatch, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if grid.is_empty() {
        return Err(Error::invalid("threshold grid is empty"));
    }
    grid.iter().map(|&t| Ok((t, hamming_accuracy(batch, t)?))).collect()
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_grid() -> Vec<f64> {
    (1..20).map(|i| i as f64 * 0.05).collect()
}

pub fn write_curve_csv(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = Vec::new();
    writeln!(out, "threshold,accuracy").expect("write to vec");
    for (t, a) in curve {
        writeln!(out, "{t},{a}").expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub definitions: &'static str,
    pub samples: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub roc_auc: f64,
    pub roc_auc_averaging: Averaging,
    pub roc_auc_excluded: Vec<String>,
    pub f1: f64,
    pub classes: Vec<String>,
    pub per_label_accuracy: Vec<f64>,
    pub threshold_curve: Vec<(f64, f64)>,
}

fn class_name(i: usize) -> String {
    InstrumentClass::from_index(i)
        .map(|c| c.as_str().to_string())
        .unwrap_or_else(|| format!("class_{i}"))
}

pub fn evaluate(batch: &EvalBatch, threshold: f64, grid: &[f64], averaging: Averaging) -> Result<MetricsReport> {
    let auc = roc_auc_per_class(batch)?;
    let roc_auc = match averaging {
        Averaging::Macro => auc.value,
        Averaging::Micro => roc_auc_micro(batch)?,
    };
    Ok(MetricsReport {
        definitions: REPORT_DEFINITIONS,
        samples: batch.n_samples(),
        threshold,
        accuracy: hamming_accuracy(batch, threshold)?,
        roc_auc,
        roc_auc_averaging: averaging,
        roc_auc_excluded: auc.excluded.iter().map(|&i| class_name(i)).collect(),
        f1: f1_macro(batch, threshold)?,
        classes: (0..batch.n_classes()).map(class_name).collect(),
        per_label_accuracy: per_label_accuracy(batch, threshold)?,
        threshold_curve: threshold_sweep(batch, grid)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hamming_cases() {
        let b = EvalBatch::new(array![[1.0, 0.0], [0.0, 1.0]], array![[1, 0], [0, 1]]).unwrap();
        assert_eq!(hamming_accuracy(&b, 0.5).unwrap(), 1.0);
        let flipped = EvalBatch::new(array![[0.0, 1.0], [1.0, 0.0]], array![[1, 0], [0, 1]]).unwrap();
        assert_eq!(hamming_accuracy(&flipped, 0.5).unwrap(), 0.0);
        let mixed = EvalBatch::new(array![[0.9, 0.2], [0.4, 0.8]], array![[1, 0], [1, 1]]).unwrap();
        assert_eq!(hamming_accuracy(&mixed, 0.5).unwrap(), 0.75);
        assert!(hamming_accuracy(&mixed, 1.0).is_err());
        let empty = EvalBatch::new(Array2::zeros((0, 3)), Array2::zeros((0, 3))).unwrap();
        assert!(matches!(hamming_accuracy(&empty, 0.5), Err(Error::EmptyBatch)));
    }

    #[test]
    fn auc_cases() {
        let b = EvalBatch::new(array![[0.1], [0.4], [0.35], [0.8]], array![[0], [0], [1], [1]]).unwrap();
        assert_eq!(roc_auc_macro(&b).unwrap(), 0.75);
        let sep = EvalBatch::new(array![[0.1], [0.2], [0.7], [0.8]], array![[0], [0], [1], [1]]).unwrap();
        assert_eq!(roc_auc_macro(&sep).unwrap(), 1.0);
        let tied = EvalBatch::new(array![[0.3], [0.3], [0.3]], array![[0], [1], [1]]).unwrap();
        assert_eq!(roc_auc_macro(&tied).unwrap(), 0.5);
        let none = EvalBatch::new(array![[0.3], [0.4]], array![[1], [1]]).unwrap();
        assert!(matches!(roc_auc_macro(&none), Err(Error::NoEvaluableClass)));
    }

    #[test]
    fn auc_excludes_degenerate_classes() {
        let b = EvalBatch::new(array![[0.1, 0.5], [0.9, 0.5]], array![[0, 1], [1, 1]]).unwrap();
        let s = roc_auc_per_class(&b).unwrap();
        assert_eq!(s.value, 1.0);
        assert_eq!(s.excluded, vec![1]);
    }

    #[test]
    fn f1_cases() {
        let perfect = EvalBatch::new(array![[1.0, 0.0], [0.0, 1.0]], array![[1, 0], [0, 1]]).unwrap();
        assert_eq!(f1_macro(&perfect, 0.5).unwrap(), 1.0);
        let negative = EvalBatch::new(array![[0.0, 0.0], [0.0, 0.0]], array![[1, 0], [0, 1]]).unwrap();
        assert_eq!(f1_macro(&negative, 0.5).unwrap(), 0.0);
        // TP=2, FP=1, FN=1
        let counts = EvalBatch::new(array![[0.9], [0.8], [0.7], [0.1], [0.2]], array![[1], [1], [0], [1], [0]]).unwrap();
        assert!((f1_macro(&counts, 0.5).unwrap() - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn per_label_and_sweep() {
        let b = EvalBatch::new(array![[1.0, 0.0], [1.0, 0.0]], array![[1, 1], [1, 1]]).unwrap();
        assert_eq!(per_label_accuracy(&b, 0.5).unwrap(), vec![1.0, 0.0]);
        let curve = threshold_sweep(&b, &[0.5]).unwrap();
        assert_eq!(curve, vec![(0.5, hamming_accuracy(&b, 0.5).unwrap())]);
        assert!(threshold_sweep(&b, &[]).is_err());

        let flat = EvalBatch::new(array![[0.7, 0.7], [0.7, 0.7]], array![[1, 0], [0, 0]]).unwrap();
        let lo = hamming_accuracy(&flat, 0.6).unwrap();
        let hi = hamming_accuracy(&flat, 0.8).unwrap();
        // every cell flips: 1 correct of 4 -> 3 correct of 4
        assert_eq!((lo, hi), (0.25, 0.75));
    }

    #[test]
    fn rejects_bad_batches() {
        assert!(EvalBatch::new(array![[1.5]], array![[1]]).is_err());
        assert!(EvalBatch::new(array![[0.5]], array![[2]]).is_err());
        assert!(EvalBatch::new(array![[0.5, 0.1]], array![[1]]).is_err());
    }

    #[test]
    fn csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_curve_csv(&p, &[(0.25, 0.5), (0.5, 1.0)]).unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "threshold,accuracy\n0.25,0.5\n0.5,1\n");
    }
}
