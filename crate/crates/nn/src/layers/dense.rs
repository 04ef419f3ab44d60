use rand::Rng;

use super::{check_last_dim, check_same_shape, uniform, Mode, Param};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{NnError, Tensor};
use crate::Result;

/// `y = x W + b` over the last axis. `W` is `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    /// He-style uniform initialisation scaled by fan-in, zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        Self::from_params(
            uniform(&[inputs, outputs], bound, rng),
            Tensor::zeros(&[outputs]),
        )
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Self {
        Dense {
            weight: Param::new("weight", weight),
            bias: Param::new("bias", bias),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        check_last_dim("dense", x, n_in)?;
        let rows = x.rows();
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = n_out;
        let mut y = vec![0.0; rows * n_out];
        for row in y.chunks_mut(n_out) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm_nn(rows, n_in, n_out, x.data(), self.weight.value.data(), &mut y);
        self.input = (mode == Mode::Train).then(|| x.clone());
        Tensor::new(shape, y)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or(NnError::NotTraining("dense"))?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let mut out_shape = x.shape().to_vec();
        *out_shape.last_mut().unwrap() = n_out;
        check_same_shape("dense backward", g, &out_shape)?;
        let rows = x.rows();
        gemm_tn(rows, n_in, n_out, x.data(), g.data(), self.weight.grad.data_mut());
        let db = self.bias.grad.data_mut();
        for row in g.data().chunks(n_out) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        let mut dx = vec![0.0; rows * n_in];
        gemm_nt(rows, n_in, n_out, g.data(), self.weight.value.data(), &mut dx);
        Tensor::new(x.shape().to_vec(), dx)
    }
}
