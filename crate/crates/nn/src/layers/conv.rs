use rand::Rng;

use super::{check_same_shape, uniform, Mode, Param};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{shape_err, NnError, Tensor};
use crate::Result;

/// One-dimensional convolution along time with `width - 1` zeros of left
/// padding, so the output at step `t` reads inputs `t - width + 1 ..= t`.
///
/// The kernel is stored as `[width, in_channels, filters]`; tap `d` multiplies
/// the input `width - 1 - d` steps in the past.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalConv1d {
    pub kernel: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl CausalConv1d {
    pub fn new(in_channels: usize, filters: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        if width == 0 {
            return Err(NnError::Config("convolution width must be at least 1".into()));
        }
        let bound = (6.0 / (width * in_channels) as f64).sqrt();
        Self::from_params(
            uniform(&[width, in_channels, filters], bound, rng),
            Tensor::zeros(&[filters]),
        )
    }

    pub fn from_params(kernel: Tensor, bias: Tensor) -> Result<Self> {
        match *kernel.shape() {
            [w, _, s] if w >= 1 && bias.shape() == [s] => {}
            _ => return Err(shape_err("causal_conv1d", "[width>=1, in, filters] + [filters]", kernel.shape())),
        }
        Ok(CausalConv1d {
            kernel: Param::new("kernel", kernel),
            bias: Param::new("bias", bias),
            input: None,
        })
    }

    pub fn width(&self) -> usize {
        self.kernel.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.value.shape()[1]
    }

    pub fn filters(&self) -> usize {
        self.kernel.value.shape()[2]
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, t, n) = x.dims3("causal_conv1d")?;
        if n != self.in_channels() {
            return Err(shape_err(
                "causal_conv1d",
                format!("{} input channels", self.in_channels()),
                x.shape(),
            ));
        }
        let (w, s) = (self.width(), self.filters());
        let mut y = vec![0.0; b * t * s];
        for row in y.chunks_mut(s) {
            row.copy_from_slice(self.bias.value.data());
        }
        let k = self.kernel.value.data();
        for bi in 0..b {
            let xb = &x.data()[bi * t * n..(bi + 1) * t * n];
            let yb = &mut y[bi * t * s..(bi + 1) * t * s];
            for d in 0..w {
                let shift = w - 1 - d;
                if shift >= t {
                    continue;
                }
                let kd = &k[d * n * s..(d + 1) * n * s];
                gemm_nn(t - shift, n, s, xb, kd, &mut yb[shift * s..]);
            }
        }
        self.input = (mode == Mode::Train).then(|| x.clone());
        Tensor::new(vec![b, t, s], y)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or(NnError::NotTraining("causal_conv1d"))?;
        let (b, t, n) = x.dims3("causal_conv1d backward")?;
        let (w, s) = (self.width(), self.filters());
        check_same_shape("causal_conv1d backward", g, &[b, t, s])?;
        let db = self.bias.grad.data_mut();
        for row in g.data().chunks(s) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        let k = self.kernel.value.data();
        let dk = self.kernel.grad.data_mut();
        let mut dx = vec![0.0; b * t * n];
        for bi in 0..b {
            let xb = &x.data()[bi * t * n..(bi + 1) * t * n];
            let gb = &g.data()[bi * t * s..(bi + 1) * t * s];
            let dxb = &mut dx[bi * t * n..(bi + 1) * t * n];
            for d in 0..w {
                let shift = w - 1 - d;
                if shift >= t {
                    continue;
                }
                let m = t - shift;
                gemm_tn(m, n, s, xb, &gb[shift * s..], &mut dk[d * n * s..(d + 1) * n * s]);
                gemm_nt(m, n, s, &gb[shift * s..], &k[d * n * s..(d + 1) * n * s], dxb);
            }
        }
        Tensor::new(vec![b, t, n], dx)
    }
}
