//! Architectures and the sequential model container.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{
    BatchNorm, CausalConv1d, Dense, Dropout, LayerNode, Lstm, LstmVariant, Mode, PRelu, Param, Softmax,
};
use crate::tensor::{shape_err, NnError, Tensor};
use crate::Result;

pub const NUM_OUTPUTS: usize = 3;
pub const LSTM_HIDDEN: usize = 32;
pub const DEFAULT_TEMPORAL_WINDOW: usize = 300;
pub const DEFAULT_FLAT_WINDOW: usize = 50;
pub const DEFAULT_DROPOUT: f64 = 0.5;

/// `(filters, width)` of each convolution in the standalone CNN.
pub const CNN_CONVS: [(usize, usize); 5] = [(16, 10), (16, 10), (32, 8), (32, 6), (32, 4)];
pub const CNN_HEAD: usize = 32;
/// `(filters, width)` of each convolution feeding the LSTM.
pub const CNN_LSTM_CONVS: [(usize, usize); 4] = [(16, 5), (16, 5), (32, 5), (32, 5)];
pub const LSTM_HEAD: usize = 64;
pub const MLP_HIDDEN: [usize; 3] = [128, 64, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    LinearSvm,
    Mlp,
    Cnn,
    Lstm,
    CnnLstm,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::LinearSvm,
        Architecture::Mlp,
        Architecture::Cnn,
        Architecture::Lstm,
        Architecture::CnnLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::LinearSvm => "linear_svm",
            Architecture::Mlp => "mlp",
            Architecture::Cnn => "cnn",
            Architecture::Lstm => "lstm",
            Architecture::CnnLstm => "cnn_lstm",
        }
    }

    /// Emits one prediction per input step.
    pub fn is_temporal(self) -> bool {
        matches!(self, Architecture::Cnn | Architecture::Lstm | Architecture::CnnLstm)
    }

    pub fn is_neural(self) -> bool {
        self != Architecture::LinearSvm
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s || (s == "svm" && *a == Architecture::LinearSvm))
            .ok_or_else(|| NnError::Config(format!("unknown architecture {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Steps per input window.
    pub window: usize,
    /// Feature width per step.
    pub features: usize,
    /// Label horizon the model is trained for.
    pub horizon: usize,
    #[serde(default)]
    pub lstm_variant: LstmVariant,
    pub dropout: f64,
}

/// One entry of the declared layer stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDecl {
    pub kind: String,
    pub inputs: usize,
    pub outputs: usize,
    pub width: usize,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, features: usize, horizon: usize) -> Self {
        let window = if architecture.is_temporal() {
            DEFAULT_TEMPORAL_WINDOW
        } else {
            DEFAULT_FLAT_WINDOW
        };
        ModelSpec {
            architecture,
            window,
            features,
            horizon,
            lstm_variant: LstmVariant::CellOutput,
            dropout: DEFAULT_DROPOUT,
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    /// Width of one flattened input row for the MLP and SVM.
    pub fn flat_width(&self) -> usize {
        self.window * self.features
    }

    pub fn validate(&self) -> Result<()> {
        if self.features == 0 || self.window == 0 {
            return Err(NnError::Config("window and feature width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// The layer stack this spec builds, with the dimensions each layer
    /// maps between.
    pub fn layer_plan(&self) -> Vec<LayerDecl> {
        let mut plan = Vec::new();
        let mut push = |kind: &str, inputs: usize, outputs: usize, width: usize| {
            plan.push(LayerDecl {
                kind: kind.to_string(),
                inputs,
                outputs,
                width,
            })
        };
        let f = self.features;
        let conv_block = |push: &mut dyn FnMut(&str, usize, usize, usize), convs: &[(usize, usize)]| {
            let mut c = f;
            for &(filters, width) in convs {
                push("causal_conv1d", c, filters, width);
                push("batch_norm", filters, filters, 1);
                push("prelu", filters, filters, 1);
                c = filters;
            }
            c
        };
        let lstm_head = |push: &mut dyn FnMut(&str, usize, usize, usize), n: usize| {
            push("lstm", n, LSTM_HIDDEN, 1);
            push("dense", LSTM_HIDDEN, LSTM_HEAD, 1);
            push("prelu", LSTM_HEAD, LSTM_HEAD, 1);
            push("dropout", LSTM_HEAD, LSTM_HEAD, 1);
            push("dense", LSTM_HEAD, NUM_OUTPUTS, 1);
            push("softmax", NUM_OUTPUTS, NUM_OUTPUTS, 1);
        };
        match self.architecture {
            Architecture::Cnn => {
                let c = conv_block(&mut push, &CNN_CONVS);
                push("dense", c, CNN_HEAD, 1);
                push("prelu", CNN_HEAD, CNN_HEAD, 1);
                push("dense", CNN_HEAD, NUM_OUTPUTS, 1);
                push("softmax", NUM_OUTPUTS, NUM_OUTPUTS, 1);
            }
            Architecture::Lstm => lstm_head(&mut push, f),
            Architecture::CnnLstm => {
                let c = conv_block(&mut push, &CNN_LSTM_CONVS);
                lstm_head(&mut push, c);
            }
            Architecture::Mlp => {
                let mut c = self.flat_width();
                for h in MLP_HIDDEN {
                    push("dense", c, h, 1);
                    push("prelu", h, h, 1);
                    push("dropout", h, h, 1);
                    c = h;
                }
                push("dense", c, NUM_OUTPUTS, 1);
                push("softmax", NUM_OUTPUTS, NUM_OUTPUTS, 1);
            }
            Architecture::LinearSvm => push("linear", self.flat_width(), NUM_OUTPUTS, 1),
        }
        plan
    }
}

/// An ordered stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<LayerNode>,
}

impl Model {
    /// Builds the declared stack with parameters drawn from `seed`.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers: Vec<LayerNode> = Vec::new();
        for (idx, decl) in spec.layer_plan().iter().enumerate() {
            let node: LayerNode = match decl.kind.as_str() {
                "causal_conv1d" => CausalConv1d::new(decl.inputs, decl.outputs, decl.width, &mut rng)?.into(),
                "batch_norm" => BatchNorm::new(decl.outputs).into(),
                "prelu" => PRelu::new(decl.outputs).into(),
                "dense" => Dense::new(decl.inputs, decl.outputs, &mut rng).into(),
                "lstm" => Lstm::new(decl.inputs, decl.outputs, spec.lstm_variant, &mut rng).into(),
                "dropout" => Dropout::new(spec.dropout, seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(idx as u64 + 1)))?.into(),
                "softmax" => Softmax::new().into(),
                other => {
                    return Err(NnError::Config(format!(
                        "architecture {} has no neural layer stack ({other})",
                        spec.architecture
                    )))
                }
            };
            layers.push(node);
        }
        Ok(Model { spec, layers })
    }

    pub fn from_layers(spec: ModelSpec, layers: Vec<LayerNode>) -> Self {
        Model { spec, layers }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerNode] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerNode] {
        &mut self.layers
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = &self.spec;
        let ok = if s.architecture.is_temporal() {
            x.shape().len() == 3 && x.shape()[2] == s.features
        } else {
            x.shape().len() == 2 && x.shape()[1] == s.flat_width()
        };
        if !ok {
            let expected = if s.architecture.is_temporal() {
                format!("(B, T, {})", s.features)
            } else {
                format!("(B, {})", s.flat_width())
            };
            return Err(shape_err("model input", expected, x.shape()));
        }
        if !x.all_finite() {
            return Err(NnError::NonFinite {
                layer: "input".into(),
                stage: "forward",
            });
        }
        Ok(())
    }

    /// Class probabilities: `(B, T, 3)` for temporal models, `(B, 3)` for the MLP.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, mode)?;
            if !h.all_finite() {
                return Err(NnError::NonFinite {
                    layer: format!("{idx}.{}", layer.kind()),
                    stage: "forward",
                });
            }
        }
        Ok(h)
    }

    /// Inference without touching `self`; safe to share across threads.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut l = layer.clone();
            h = l.forward(&h, Mode::Infer)?;
            if !h.all_finite() {
                return Err(NnError::NonFinite {
                    layer: format!("{idx}.{}", layer.kind()),
                    stage: "forward",
                });
            }
        }
        Ok(h)
    }

    /// Replaces each batch-norm running estimate with the exact biased moments
    /// of that layer's input over `batches`, bottom layer first, so every
    /// layer is measured on inputs normalised by the refreshed layers below.
    /// Parameters are untouched.
    pub fn refresh_batch_norm<F>(&mut self, batches: usize, mut batch: F) -> Result<()>
    where
        F: FnMut(usize) -> Result<Tensor>,
    {
        let bn_layers: Vec<usize> = (0..self.layers.len())
            .filter(|&i| matches!(self.layers[i], LayerNode::BatchNorm(_)))
            .collect();
        if bn_layers.is_empty() {
            return Ok(());
        }
        let mut acts = Vec::with_capacity(batches);
        for b in 0..batches {
            let x = batch(b)?;
            self.check_input(&x)?;
            acts.push(x);
        }
        let mut done = 0;
        for i in bn_layers {
            let c = match &self.layers[i] {
                LayerNode::BatchNorm(b) => b.channels(),
                _ => unreachable!(),
            };
            let mut n = 0.0;
            let mut mean = vec![0.0; c];
            let mut m2 = vec![0.0; c];
            for h in acts.iter_mut() {
                for layer in &self.layers[done..i] {
                    *h = layer.clone().forward(h, Mode::Infer)?;
                }
                let rows = h.rows() as f64;
                if rows == 0.0 {
                    continue;
                }
                let mut bm = vec![0.0; c];
                for row in h.data().chunks(c) {
                    bm.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                }
                bm.iter_mut().for_each(|m| *m /= rows);
                let mut bv = vec![0.0; c];
                for row in h.data().chunks(c) {
                    for j in 0..c {
                        let d = row[j] - bm[j];
                        bv[j] += d * d;
                    }
                }
                let total = n + rows;
                for j in 0..c {
                    let d = bm[j] - mean[j];
                    mean[j] += d * rows / total;
                    m2[j] += bv[j] + d * d * n * rows / total;
                }
                n = total;
            }
            done = i;
            if n == 0.0 {
                return Err(NnError::Data("batch-norm refresh over no rows".into()));
            }
            if let LayerNode::BatchNorm(bn) = &mut self.layers[i] {
                bn.running_mean.data_mut().copy_from_slice(&mean);
                for (r, v) in bn.running_var.data_mut().iter_mut().zip(&m2) {
                    *r = v / n;
                }
            }
        }
        Ok(())
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerNode::BatchNorm(_)))
    }

    /// Backpropagates `grad` (with respect to the output probabilities)
    /// through the stack, accumulating parameter gradients.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for (idx, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(&g)?;
            if !g.all_finite() {
                return Err(NnError::NonFinite {
                    layer: format!("{idx}.{}", layer.kind()),
                    stage: "backward",
                });
            }
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(LayerNode::zero_grad);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Layer-qualified names, e.g. `0.causal_conv1d.kernel`.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let kind = l.kind();
                l.params().into_iter().map(move |p| (format!("{i}.{kind}.{}", p.name), p))
            })
            .collect()
    }

    pub fn named_buffers(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let kind = l.kind();
                l.buffers().into_iter().map(move |(n, t)| (format!("{i}.{kind}.{n}"), t))
            })
            .collect()
    }

    /// Mutable access to every saved tensor by qualified name.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                let kind = l.kind();
                l.tensors_mut()
                    .into_iter()
                    .map(move |(n, t)| (format!("{i}.{kind}.{n}"), t))
            })
            .collect()
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.len()).sum()
    }
}

pub fn build_cnn(features: usize, seed: u64) -> Result<Model> {
    Model::build(ModelSpec::new(Architecture::Cnn, features, 0), seed)
}

pub fn build_lstm(features: usize, seed: u64) -> Result<Model> {
    Model::build(ModelSpec::new(Architecture::Lstm, features, 0), seed)
}

pub fn build_cnn_lstm(features: usize, seed: u64) -> Result<Model> {
    Model::build(ModelSpec::new(Architecture::CnnLstm, features, 0), seed)
}

pub fn build_mlp(window: usize, features: usize, seed: u64) -> Result<Model> {
    Model::build(ModelSpec::new(Architecture::Mlp, features, 0).with_window(window), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert_eq!("svm".parse::<Architecture>().unwrap(), Architecture::LinearSvm);
        assert!("gru".parse::<Architecture>().is_err());
    }

    #[test]
    fn layer_plans_chain() {
        for a in Architecture::ALL {
            let plan = ModelSpec::new(a, 41, 10).layer_plan();
            for w in plan.windows(2) {
                assert_eq!(w[0].outputs, w[1].inputs, "{a}: {:?}", w);
            }
            assert_eq!(plan.last().unwrap().outputs, NUM_OUTPUTS);
        }
    }

    #[test]
    fn svm_has_no_neural_stack() {
        assert!(Model::build(ModelSpec::new(Architecture::LinearSvm, 4, 10), 0).is_err());
    }

    #[test]
    fn named_tensors_cover_params_and_buffers() {
        let mut m = build_cnn(5, 1).unwrap();
        let n = m.named_params().len() + m.named_buffers().len();
        let names: Vec<String> = m.named_tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), n);
        assert_eq!(names[0], "0.causal_conv1d.kernel");
        assert!(names.contains(&"1.batch_norm.running_var".to_string()));
    }
}
