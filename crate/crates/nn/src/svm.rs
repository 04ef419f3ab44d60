//! One-vs-rest linear SVM trained by stochastic sub-gradient descent.

use serde::{Deserialize, Serialize};

use crate::tensor::{shape_err, NnError, Tensor};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Initial step size `η0`; step `t` uses `η0 / (1 + η0·λ·t)`.
    pub learning_rate: f64,
    /// L2 penalty `λ`.
    pub l2: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            learning_rate: 1e-3,
            l2: 1e-4,
        }
    }
}

/// Three linear scorers `s_c(x) = x·w_c + b_c`; the prediction is the
/// highest score, ties going to the lowest class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    /// `[dim, classes]`
    pub weight: Tensor,
    pub bias: Tensor,
    pub steps: u64,
}

impl LinearSvm {
    pub fn new(dim: usize, classes: usize) -> Self {
        LinearSvm {
            weight: Tensor::zeros(&[dim, classes]),
            bias: Tensor::zeros(&[classes]),
            steps: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn score_row(&self, x: &[f64]) -> Vec<f64> {
        let k = self.classes();
        let mut s = self.bias.data().to_vec();
        for (xi, wrow) in x.iter().zip(self.weight.data().chunks(k)) {
            for (sc, w) in s.iter_mut().zip(wrow) {
                *sc += xi * w;
            }
        }
        s
    }

    /// Scores of a `(B, dim)` batch.
    pub fn scores(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.shape()[1] != self.dim() {
            return Err(shape_err("linear_svm", format!("(B, {})", self.dim()), x.shape()));
        }
        let k = self.classes();
        let mut out = Vec::with_capacity(x.rows() * k);
        for row in x.data().chunks(self.dim()) {
            out.extend(self.score_row(row));
        }
        Tensor::new(vec![x.rows(), k], out)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.scores(x)?.argmax_rows())
    }

    /// Sum over classes of the one-vs-rest hinge loss of one sample.
    pub fn hinge(&self, x: &[f64], y: usize) -> f64 {
        self.score_row(x)
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let sign = if c == y { 1.0 } else { -1.0 };
                (1.0 - sign * s).max(0.0)
            })
            .sum()
    }

    /// One sub-gradient step on `weight · hinge + λ/2 |w|²`. Returns the
    /// scores seen before the update.
    pub fn step(&mut self, x: &[f64], y: usize, weight: f64, cfg: &SvmConfig) -> Result<Vec<f64>> {
        if x.len() != self.dim() || y >= self.classes() {
            return Err(NnError::Data(format!(
                "svm sample of width {} with class {y}, expected width {}",
                x.len(),
                self.dim()
            )));
        }
        let k = self.classes();
        let scores = self.score_row(x);
        let eta = cfg.learning_rate / (1.0 + cfg.learning_rate * cfg.l2 * self.steps as f64);
        let shrink = 1.0 - eta * cfg.l2;
        let coef: Vec<f64> = (0..k)
            .map(|c| {
                let sign = if c == y { 1.0 } else { -1.0 };
                if sign * scores[c] < 1.0 {
                    eta * weight * sign
                } else {
                    0.0
                }
            })
            .collect();
        for (xi, wrow) in x.iter().zip(self.weight.data_mut().chunks_mut(k)) {
            for (w, a) in wrow.iter_mut().zip(&coef) {
                *w = *w * shrink + a * xi;
            }
        }
        for (b, a) in self.bias.data_mut().iter_mut().zip(&coef) {
            *b += a;
        }
        self.steps += 1;
        Ok(scores)
    }
}
