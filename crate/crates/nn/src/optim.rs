//! Gradient-descent optimisers.

use serde::{Deserialize, Serialize};

use crate::layers::Param;
use crate::tensor::{shape_err, NnError, Tensor};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            learning_rate: 1e-3,
            decay: 0.9,
            eps: 1e-7,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.decay)
            && self.eps > 0.0;
        if !ok {
            return Err(NnError::Config(format!("invalid RMSProp settings {self:?}")));
        }
        Ok(())
    }
}

/// `acc ← decay·acc + (1 − decay)·g²`, `p ← p − η·g / √(acc + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    accumulators: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig) -> Self {
        RmsProp {
            config,
            accumulators: Vec::new(),
        }
    }

    pub fn accumulators(&self) -> &[Tensor] {
        &self.accumulators
    }

    /// Restores state saved from an earlier run.
    pub fn set_accumulators(&mut self, acc: Vec<Tensor>) -> Result<()> {
        if acc.iter().flat_map(|t| t.data()).any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(NnError::Checkpoint("negative or non-finite accumulator".into()));
        }
        self.accumulators = acc;
        Ok(())
    }

    pub fn step(&mut self, params: Vec<&mut Param>) -> Result<()> {
        if self.accumulators.is_empty() {
            self.accumulators = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        }
        if self.accumulators.len() != params.len() {
            return Err(NnError::Shape {
                op: "rmsprop",
                expected: format!("{} parameters", self.accumulators.len()),
                found: vec![params.len()],
            });
        }
        let RmsPropConfig {
            learning_rate: lr,
            decay,
            eps,
        } = self.config;
        for (p, acc) in params.into_iter().zip(&mut self.accumulators) {
            if acc.shape() != p.value.shape() || p.grad.shape() != p.value.shape() {
                return Err(shape_err("rmsprop", format!("{:?}", acc.shape()), p.value.shape()));
            }
            let g = p.grad.data();
            let a = acc.data_mut();
            let v = p.value.data_mut();
            for k in 0..g.len() {
                a[k] = decay * a[k] + (1.0 - decay) * g[k] * g[k];
                v[k] -= lr * g[k] / (a[k] + eps).sqrt();
            }
        }
        Ok(())
    }
}
