use super::{check_last_dim, check_same_shape, Mode, Param};
use crate::tensor::{NnError, Tensor};
use crate::Result;

pub const PRELU_INIT_SLOPE: f64 = 0.25;

/// Parametric ReLU with one learnable negative-side slope per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PRelu {
    pub slope: Param,
    input: Option<Tensor>,
}

impl PRelu {
    pub fn new(channels: usize) -> Self {
        Self::from_slopes(Tensor::full(&[channels], PRELU_INIT_SLOPE))
    }

    pub fn from_slopes(slope: Tensor) -> Self {
        PRelu {
            slope: Param::new("slope", slope),
            input: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.slope.value.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.channels();
        check_last_dim("prelu", x, c)?;
        let a = self.slope.value.data();
        let mut y = x.clone();
        for row in y.data_mut().chunks_mut(c) {
            for (v, &s) in row.iter_mut().zip(a) {
                if *v < 0.0 {
                    *v *= s;
                }
            }
        }
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or(NnError::NotTraining("prelu"))?;
        check_same_shape("prelu backward", g, x.shape())?;
        let c = self.channels();
        let a = self.slope.value.data();
        let da = self.slope.grad.data_mut();
        let mut dx = g.clone();
        for (xr, dr) in x.data().chunks(c).zip(dx.data_mut().chunks_mut(c)) {
            for j in 0..c {
                if xr[j] < 0.0 {
                    da[j] += xr[j] * dr[j];
                    dr[j] *= a[j];
                }
            }
        }
        Ok(dx)
    }
}
