use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_same_shape, Mode};
use crate::tensor::{NnError, Tensor};
use crate::Result;

/// Inverted dropout: in training, each unit is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`. Identity at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Tensor>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Config(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Infer {
            self.mask = None;
            return Ok(x.clone());
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let rate = self.rate;
        let rng = &mut self.rng;
        let mask = Tensor::from_fn(x.shape(), |_| {
            if rate > 0.0 && rng.random::<f64>() < rate {
                0.0
            } else {
                scale
            }
        });
        let mut y = x.clone();
        for (v, m) in y.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
        self.mask = Some(mask);
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or(NnError::NotTraining("dropout"))?;
        check_same_shape("dropout backward", g, mask.shape())?;
        let mut dx = g.clone();
        for (v, m) in dx.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
        Ok(dx)
    }
}
