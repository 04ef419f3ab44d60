//! Confusion-matrix metrics for the 3-class trend problem.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{Trend, NUM_CLASSES};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("truth has {truth} labels, predictions have {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label value {0} is not one of -1, 0, 1")]
    OutOfDomain(i8),
}

/// Rows are true classes, columns predicted classes, both in
/// (down, stationary, up) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn record(&mut self, truth: Trend, pred: Trend) {
        self.counts[truth.class_index()][pred.class_index()] += 1;
    }

    pub fn record_index(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Cohen's kappa. A matrix whose chance agreement is 1 (a single class on
    /// both axes) or an empty matrix yields 0.
    pub fn kappa(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            log::warn!("kappa of an empty confusion matrix; reporting 0");
            return 0.0;
        }
        let n = n as f64;
        let p_o = self.diagonal() as f64 / n;
        let p_e: f64 = (0..NUM_CLASSES)
            .map(|i| self.row_sum(i) as f64 * self.col_sum(i) as f64)
            .sum::<f64>()
            / (n * n);
        if p_e >= 1.0 {
            log::warn!("kappa undefined (chance agreement 1); reporting 0");
            return 0.0;
        }
        (p_o - p_e) / (1.0 - p_e)
    }

    /// Per-class (recall, precision, f1). Empty denominators give 0.
    pub fn per_class(&self) -> [(f64, f64, f64); NUM_CLASSES] {
        let mut out = [(0.0, 0.0, 0.0); NUM_CLASSES];
        for (c, slot) in out.iter_mut().enumerate() {
            let tp = self.counts[c][c] as f64;
            let recall = ratio_or_zero(tp, self.row_sum(c) as f64, "recall", c);
            let precision = ratio_or_zero(tp, self.col_sum(c) as f64, "precision", c);
            let f1 = if recall + precision > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            *slot = (recall, precision, f1);
        }
        out
    }

    pub fn macro_scores(&self) -> MacroScores {
        let pc = self.per_class();
        let k = NUM_CLASSES as f64;
        let recall = pc.iter().map(|c| c.0).sum::<f64>() / k;
        let precision = pc.iter().map(|c| c.1).sum::<f64>() / k;
        let f1 = pc.iter().map(|c| c.2).sum::<f64>() / k;
        let f1_of_means = if recall + precision > 0.0 {
            2.0 * recall * precision / (recall + precision)
        } else {
            0.0
        };
        MacroScores {
            recall,
            precision,
            f1,
            f1_of_means,
        }
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.diagonal() as f64 / n as f64,
        }
    }
}

fn ratio_or_zero(num: f64, den: f64, what: &str, class: usize) -> f64 {
    if den == 0.0 {
        log::debug!("{what} of class {class} has an empty denominator; counted as 0");
        0.0
    } else {
        num / den
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: Self) {
        for i in 0..NUM_CLASSES {
            for j in 0..NUM_CLASSES {
                self.counts[i][j] += rhs.counts[i][j];
            }
        }
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::new(), Add::add)
    }
}

/// Unweighted means over the three classes.
///
/// `f1` averages per-class F1 scores; `f1_of_means` is the harmonic mean of
/// the macro recall and macro precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub f1_of_means: f64,
}

/// Counts `(truth, pred)` pairs given as -1/0/+1 values.
pub fn accumulate(truth: &[i8], pred: &[i8]) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::new();
    for (&t, &p) in truth.iter().zip(pred) {
        let t = Trend::from_i8(t).ok_or(MetricsError::OutOfDomain(t))?;
        let p = Trend::from_i8(p).ok_or(MetricsError::OutOfDomain(p))?;
        cm.record(t, p);
    }
    Ok(cm)
}
