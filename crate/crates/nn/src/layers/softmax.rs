use super::{check_same_shape, Mode};
use crate::tensor::{NnError, Tensor};
use crate::Result;

/// Softmax over the last axis.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Softmax {
    output: Option<Tensor>,
}

impl Softmax {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut y = x.clone();
        softmax_rows(&mut y);
        self.output = (mode == Mode::Train).then(|| y.clone());
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let y = self.output.as_ref().ok_or(NnError::NotTraining("softmax"))?;
        check_same_shape("softmax backward", g, y.shape())?;
        let c = y.last_dim();
        let mut dx = g.clone();
        for (yr, dr) in y.data().chunks(c).zip(dx.data_mut().chunks_mut(c)) {
            let dot: f64 = yr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
            for (d, &yv) in dr.iter_mut().zip(yr) {
                *d = yv * (*d - dot);
            }
        }
        Ok(dx)
    }
}

pub(crate) fn softmax_rows(t: &mut Tensor) {
    let c = t.last_dim();
    if c == 0 {
        return;
    }
    for row in t.data_mut().chunks_mut(c) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_distribution() {
        let mut s = Softmax::new();
        let y = s.forward(&Tensor::full(&[2, 3], 7.5), Mode::Infer).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_sum_to_one_for_large_logits() {
        let mut s = Softmax::new();
        let x = Tensor::new(vec![2, 3], vec![1000.0, 999.0, -1000.0, 0.1, 0.2, 0.3]).unwrap();
        let y = s.forward(&x, Mode::Infer).unwrap();
        assert!(y.all_finite());
        for row in y.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
