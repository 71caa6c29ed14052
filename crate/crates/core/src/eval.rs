//! Point-wise detection metrics: ROC-AUC and best-threshold F1.
//!
//! A point is predicted anomalous when `score >= threshold`.

use std::fmt;

use crate::error::{LntError, Result};

/// Confusion counts under the inclusive threshold rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        f1_from_counts(self.tp, self.fp, self.fn_)
    }
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(LntError::Length {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(LntError::Data("scores must be finite".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(LntError::Data("labels must be 0 or 1".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(LntError::SingleClass);
    }
    Ok((pos, neg))
}

/// Counts at a fixed threshold.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    if scores.len() != labels.len() {
        return Err(LntError::Length {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let order = descending(scores);
    // twice the Mann-Whitney statistic, accumulated per tie group
    let mut twice: u128 = 0;
    let mut neg_below = neg as u128;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        neg_below -= n;
        twice += p * (2 * neg_below + n);
        i = j;
    }
    Ok(twice as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Best F1 operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Point {
    pub f1: f64,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Confusion,
}

/// Sweeps every distinct score as a threshold and keeps the highest F1;
/// among equal F1 values the lowest threshold (highest recall) wins.
pub fn best_f1(scores: &[f64], labels: &[u8]) -> Result<F1Point> {
    let (pos, neg) = check(scores, labels)?;
    let order = descending(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best: Option<F1Point> = None;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let c = Confusion {
            tp,
            fp,
            tn: neg - fp,
            fn_: pos - tp,
        };
        let f1 = c.f1();
        if best.is_none_or(|b| f1 >= b.f1) {
            best = Some(F1Point {
                f1,
                threshold,
                precision: c.precision(),
                recall: c.recall(),
                confusion: c,
            });
        }
    }
    Ok(best.expect("non-empty scores"))
}

/// ROC-AUC together with the best-F1 operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub auc: f64,
    pub best: F1Point,
}

pub fn evaluate(scores: &[f64], labels: &[u8]) -> Result<EvalResult> {
    Ok(EvalResult {
        auc: roc_auc(scores, labels)?,
        best: best_f1(scores, labels)?,
    })
}

impl EvalResult {
    pub const CSV_HEADER: &'static str = "auc,best_f1,threshold,precision,recall,tp,fp,tn,fn";

    pub fn csv_line(&self) -> String {
        let b = &self.best;
        let c = &b.confusion;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.auc, b.f1, b.threshold, b.precision, b.recall, c.tp, c.fp, c.tn, c.fn_
        )
    }
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.best;
        let c = &b.confusion;
        writeln!(f, "{:<10} {:.6}", "auc", self.auc)?;
        writeln!(f, "{:<10} {:.6}", "best_f1", b.f1)?;
        writeln!(f, "{:<10} {:.6}", "threshold", b.threshold)?;
        writeln!(f, "{:<10} {:.6}", "precision", b.precision)?;
        writeln!(f, "{:<10} {:.6}", "recall", b.recall)?;
        write!(f, "{:<10} tp={} fp={} tn={} fn={}", "counts", c.tp, c.fp, c.tn, c.fn_)
    }
}
