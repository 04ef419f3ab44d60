//! Layers with explicit forward and backward passes.
//!
//! Every layer acts on the last axis of its input. Dense, PReLU, batch-norm,
//! dropout and softmax treat all leading axes as independent rows, so a
//! `(B, T, C)` tensor is processed step by step with shared parameters.
//! Convolution and LSTM need a rank-3 `(B, T, C)` input.

mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod lstm;
mod prelu;
mod softmax;

pub use batchnorm::BatchNorm;
pub use conv::CausalConv1d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use lstm::{Lstm, LstmVariant};
pub use prelu::PRelu;
pub use softmax::Softmax;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Infer,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: &'static str,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: &'static str, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { name, value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerNode {
    CausalConv1d(CausalConv1d),
    Dense(Dense),
    PRelu(PRelu),
    BatchNorm(BatchNorm),
    Lstm(Lstm),
    Dropout(Dropout),
    Softmax(Softmax),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $e:expr) => {
        match $self {
            LayerNode::CausalConv1d($l) => $e,
            LayerNode::Dense($l) => $e,
            LayerNode::PRelu($l) => $e,
            LayerNode::BatchNorm($l) => $e,
            LayerNode::Lstm($l) => $e,
            LayerNode::Dropout($l) => $e,
            LayerNode::Softmax($l) => $e,
        }
    };
}

impl LayerNode {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerNode::CausalConv1d(_) => "causal_conv1d",
            LayerNode::Dense(_) => "dense",
            LayerNode::PRelu(_) => "prelu",
            LayerNode::BatchNorm(_) => "batch_norm",
            LayerNode::Lstm(_) => "lstm",
            LayerNode::Dropout(_) => "dropout",
            LayerNode::Softmax(_) => "softmax",
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        dispatch!(self, l => l.forward(x, mode))
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the input of the last training-mode forward pass.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        dispatch!(self, l => l.backward(grad))
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            LayerNode::CausalConv1d(l) => vec![&l.kernel, &l.bias],
            LayerNode::Dense(l) => vec![&l.weight, &l.bias],
            LayerNode::PRelu(l) => vec![&l.slope],
            LayerNode::BatchNorm(l) => vec![&l.gamma, &l.beta],
            LayerNode::Lstm(l) => l.params(),
            LayerNode::Dropout(_) | LayerNode::Softmax(_) => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            LayerNode::CausalConv1d(l) => vec![&mut l.kernel, &mut l.bias],
            LayerNode::Dense(l) => vec![&mut l.weight, &mut l.bias],
            LayerNode::PRelu(l) => vec![&mut l.slope],
            LayerNode::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            LayerNode::Lstm(l) => l.params_mut(),
            LayerNode::Dropout(_) | LayerNode::Softmax(_) => vec![],
        }
    }

    /// Non-trainable state saved with the parameters.
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            LayerNode::BatchNorm(l) => vec![
                ("running_mean", &l.running_mean),
                ("running_var", &l.running_var),
            ],
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            LayerNode::BatchNorm(l) => vec![
                ("running_mean", &mut l.running_mean),
                ("running_var", &mut l.running_var),
            ],
            _ => vec![],
        }
    }

    /// Parameter values followed by buffers, in the order of
    /// [`params`](Self::params) then [`buffers`](Self::buffers).
    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            LayerNode::BatchNorm(l) => vec![
                (l.gamma.name, &mut l.gamma.value),
                (l.beta.name, &mut l.beta.value),
                ("running_mean", &mut l.running_mean),
                ("running_var", &mut l.running_var),
            ],
            other => other
                .params_mut()
                .into_iter()
                .map(|p| (p.name, &mut p.value))
                .collect(),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

macro_rules! impl_from {
    ($($t:ident),*) => {
        $(impl From<$t> for LayerNode {
            fn from(l: $t) -> Self {
                LayerNode::$t(l)
            }
        })*
    };
}

impl_from!(CausalConv1d, Dense, PRelu, BatchNorm, Lstm, Dropout, Softmax);

pub(crate) fn check_last_dim(op: &'static str, x: &Tensor, want: usize) -> Result<()> {
    if x.shape().is_empty() || x.last_dim() != want {
        return Err(crate::tensor::shape_err(
            op,
            format!("last axis {want}"),
            x.shape(),
        ));
    }
    Ok(())
}

pub(crate) fn check_same_shape(op: &'static str, g: &Tensor, want: &[usize]) -> Result<()> {
    if g.shape() != want {
        return Err(crate::tensor::shape_err(op, format!("{want:?}"), g.shape()));
    }
    Ok(())
}

/// Uniform in `[-bound, bound]`.
pub(crate) fn uniform(shape: &[usize], bound: f64, rng: &mut impl rand::Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}
