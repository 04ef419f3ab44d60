use super::{check_last_dim, check_same_shape, Mode, Param};
use crate::tensor::{NnError, Tensor};
use crate::Result;

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalisation over all leading axes.
///
/// Training uses the biased moments of the current batch and folds them into
/// the running estimates; inference uses the running estimates only.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new("gamma", Tensor::full(&[channels], 1.0)),
            beta: Param::new("beta", Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.channels();
        check_last_dim("batch_norm", x, c)?;
        let rows = x.rows();
        let (mean, var) = match mode {
            Mode::Infer => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
            Mode::Train => {
                if rows == 0 {
                    return Err(NnError::Data("batch_norm on an empty batch".into()));
                }
                let mut mean = vec![0.0; c];
                for row in x.data().chunks(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; c];
                for row in x.data().chunks(c) {
                    for j in 0..c {
                        let d = row[j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                let mo = self.momentum;
                for (r, m) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                    *r = mo * *r + (1.0 - mo) * m;
                }
                for (r, v) in self.running_var.data_mut().iter_mut().zip(&var) {
                    *r = mo * *r + (1.0 - mo) * v;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x.clone();
        for row in xhat.data_mut().chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let mut y = xhat.clone();
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for row in y.data_mut().chunks_mut(c) {
            for j in 0..c {
                row[j] = g[j] * row[j] + b[j];
            }
        }
        self.cache = (mode == Mode::Train).then_some(BnCache { xhat, inv_std });
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NotTraining("batch_norm"))?;
        check_same_shape("batch_norm backward", g, cache.xhat.shape())?;
        let c = self.channels();
        let m = cache.xhat.rows() as f64;
        let gamma = self.gamma.value.data();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (gr, xr) in g.data().chunks(c).zip(cache.xhat.data().chunks(c)) {
            for j in 0..c {
                sum_g[j] += gr[j];
                sum_gx[j] += gr[j] * xr[j];
            }
        }
        for (d, s) in self.gamma.grad.data_mut().iter_mut().zip(&sum_gx) {
            *d += s;
        }
        for (d, s) in self.beta.grad.data_mut().iter_mut().zip(&sum_g) {
            *d += s;
        }
        let mut dx = g.clone();
        for (dr, xr) in dx.data_mut().chunks_mut(c).zip(cache.xhat.data().chunks(c)) {
            for j in 0..c {
                let k = gamma[j] * cache.inv_std[j] / m;
                dr[j] = k * (m * dr[j] - sum_g[j] - xr[j] * sum_gx[j]);
            }
        }
        Ok(dx)
    }
}
