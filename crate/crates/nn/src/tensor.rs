use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{op}: expected shape {expected}, found {found:?}")]
    Shape {
        op: &'static str,
        expected: String,
        found: Vec<usize>,
    },
    #[error("non-finite value in {stage} of {layer}")]
    NonFinite { layer: String, stage: &'static str },
    #[error("backward called without a training-mode forward pass ({0})")]
    NotTraining(&'static str),
    #[error("prediction row {row} sums to {sum}, not a distribution")]
    NotADistribution { row: usize, sum: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("data: {0}")]
    Data(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Label(#[from] lobtrend::labels::LabelError),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for NnError {
    fn from(e: std::io::Error) -> Self {
        NnError::Io(e.to_string())
    }
}

pub(crate) fn shape_err(op: &'static str, expected: impl Into<String>, found: &[usize]) -> NnError {
    NnError::Shape {
        op,
        expected: expected.into(),
        found: found.to_vec(),
    }
}

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> crate::Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("{n} elements for shape {shape:?}"),
                &[data.len()],
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of all axes but the last.
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.last_dim()).unwrap_or(0)
    }

    /// `(B, T, C)` of a rank-3 tensor.
    pub fn dims3(&self, op: &'static str) -> crate::Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [b, t, c] => Ok((b, t, c)),
            _ => Err(shape_err(op, "(B, T, C)", &self.shape)),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> crate::Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(shape_err("reshape", format!("{shape:?}"), &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Row-wise argmax over the last axis; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let c = self.last_dim();
        self.data
            .chunks(c)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}
