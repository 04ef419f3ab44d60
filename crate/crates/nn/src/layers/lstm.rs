use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_same_shape, uniform, Mode, Param};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{shape_err, NnError, Tensor};
use crate::Result;

/// Which cell equations the LSTM uses.
///
/// `CellOutput`: the output gate reads the current cell state instead of the
/// input, `o = σ(c_t W_oc + h_{t-1} W_oh + b_o)`, and the hidden state is
/// `h = o · σ(c_t)`.
///
/// `Standard`: `o = σ(x W_xo + h_{t-1} W_ho + b_o)` and `h = o · tanh(c_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LstmVariant {
    #[default]
    CellOutput,
    Standard,
}

pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Single-layer LSTM over `(B, T, N)` returning every hidden state
/// `(B, T, H)`. The carry starts at zero for each call.
///
/// Gate blocks are packed `[forget, input, candidate, output]` along the
/// second axis of `w_h` and `bias`. `w_x` holds the first three blocks for
/// the cell-output variant and all four for the standard one.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub variant: LstmVariant,
    pub w_x: Param,
    pub w_h: Param,
    pub w_oc: Option<Param>,
    pub bias: Param,
    cache: Option<LstmCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct LstmCache {
    x: Tensor,
    // time-major [T, B, H]
    f: Vec<f64>,
    i: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Lstm {
    pub fn new(inputs: usize, hidden: usize, variant: LstmVariant, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let gx = Self::input_blocks(variant);
        let w_x = uniform(&[inputs, gx * hidden], bound, rng);
        let w_h = uniform(&[hidden, 4 * hidden], bound, rng);
        let w_oc = match variant {
            LstmVariant::CellOutput => Some(uniform(&[hidden, hidden], bound, rng)),
            LstmVariant::Standard => None,
        };
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[..hidden].fill(FORGET_BIAS_INIT);
        Self::from_params(variant, w_x, w_h, w_oc, bias).expect("consistent shapes")
    }

    pub fn from_params(
        variant: LstmVariant,
        w_x: Tensor,
        w_h: Tensor,
        w_oc: Option<Tensor>,
        bias: Tensor,
    ) -> Result<Self> {
        let gx = Self::input_blocks(variant);
        let h = bias.len() / 4;
        let ok = bias.shape() == [4 * h]
            && h > 0
            && w_x.shape().len() == 2
            && w_x.shape()[1] == gx * h
            && w_h.shape() == [h, 4 * h]
            && match (&w_oc, variant) {
                (Some(w), LstmVariant::CellOutput) => w.shape() == [h, h],
                (None, LstmVariant::Standard) => true,
                _ => false,
            };
        if !ok {
            return Err(shape_err("lstm", "consistent gate blocks", w_x.shape()));
        }
        Ok(Lstm {
            variant,
            w_x: Param::new("w_x", w_x),
            w_h: Param::new("w_h", w_h),
            w_oc: w_oc.map(|w| Param::new("w_oc", w)),
            bias: Param::new("bias", bias),
            cache: None,
        })
    }

    fn input_blocks(variant: LstmVariant) -> usize {
        match variant {
            LstmVariant::CellOutput => 3,
            LstmVariant::Standard => 4,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_x.value.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_h.value.shape()[0]
    }

    pub(super) fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.w_x, &self.w_h];
        if let Some(w) = &self.w_oc {
            v.push(w);
        }
        v.push(&self.bias);
        v
    }

    pub(super) fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.w_x, &mut self.w_h];
        if let Some(w) = &mut self.w_oc {
            v.push(w);
        }
        v.push(&mut self.bias);
        v
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, t, n) = x.dims3("lstm")?;
        if n != self.inputs() {
            return Err(shape_err("lstm", format!("{} input channels", self.inputs()), x.shape()));
        }
        let h = self.hidden();
        let gx = Self::input_blocks(self.variant);
        let mut zx = vec![0.0; b * t * gx * h];
        gemm_nn(b * t, n, gx * h, x.data(), self.w_x.value.data(), &mut zx);

        let bh = b * h;
        let mut f = vec![0.0; t * bh];
        let mut ig = vec![0.0; t * bh];
        let mut g = vec![0.0; t * bh];
        let mut o = vec![0.0; t * bh];
        let mut c = vec![0.0; t * bh];
        let mut hs = vec![0.0; t * bh];
        let mut y = vec![0.0; b * t * h];
        let bias = self.bias.value.data();
        let wh = self.w_h.value.data();
        let mut z = vec![0.0; b * 4 * h];
        let mut h_prev = vec![0.0; bh];
        let mut c_prev = vec![0.0; bh];

        for ti in 0..t {
            for bi in 0..b {
                let zr = &mut z[bi * 4 * h..(bi + 1) * 4 * h];
                zr.copy_from_slice(bias);
                let xr = &zx[(bi * t + ti) * gx * h..(bi * t + ti + 1) * gx * h];
                for (a, v) in zr.iter_mut().zip(xr) {
                    *a += v;
                }
            }
            gemm_nn(b, h, 4 * h, &h_prev, wh, &mut z);
            let base = ti * bh;
            let mut c_now = vec![0.0; bh];
            for bi in 0..b {
                for j in 0..h {
                    let zr = &z[bi * 4 * h..];
                    let k = base + bi * h + j;
                    f[k] = sigmoid(zr[j]);
                    ig[k] = sigmoid(zr[h + j]);
                    g[k] = zr[2 * h + j].tanh();
                    let cv = f[k] * c_prev[bi * h + j] + ig[k] * g[k];
                    c[k] = cv;
                    c_now[bi * h + j] = cv;
                }
            }
            if let Some(woc) = &self.w_oc {
                let mut ao = vec![0.0; bh];
                for bi in 0..b {
                    ao[bi * h..(bi + 1) * h].copy_from_slice(&z[bi * 4 * h + 3 * h..(bi + 1) * 4 * h]);
                }
                gemm_nn(b, h, h, &c_now, woc.value.data(), &mut ao);
                for bi in 0..b {
                    for j in 0..h {
                        let k = base + bi * h + j;
                        o[k] = sigmoid(ao[bi * h + j]);
                        hs[k] = o[k] * sigmoid(c[k]);
                    }
                }
            } else {
                for bi in 0..b {
                    for j in 0..h {
                        let k = base + bi * h + j;
                        o[k] = sigmoid(z[bi * 4 * h + 3 * h + j]);
                        hs[k] = o[k] * c[k].tanh();
                    }
                }
            }
            for bi in 0..b {
                y[(bi * t + ti) * h..(bi * t + ti + 1) * h]
                    .copy_from_slice(&hs[base + bi * h..base + (bi + 1) * h]);
            }
            h_prev.copy_from_slice(&hs[base..base + bh]);
            c_prev = c_now;
        }
        self.cache = (mode == Mode::Train).then(|| LstmCache {
            x: x.clone(),
            f,
            i: ig,
            g,
            o,
            c,
            h: hs,
        });
        Tensor::new(vec![b, t, h], y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NotTraining("lstm"))?;
        let (b, t, n) = cache.x.dims3("lstm backward")?;
        let h = self.hidden();
        check_same_shape("lstm backward", dy, &[b, t, h])?;
        let gx = Self::input_blocks(self.variant);
        let bh = b * h;
        let mut dzx = vec![0.0; b * t * gx * h];
        let mut dh_next = vec![0.0; bh];
        let mut dc_next = vec![0.0; bh];
        let mut dz = vec![0.0; b * 4 * h];
        let mut dh = vec![0.0; bh];
        let mut dc = vec![0.0; bh];
        let mut dao = vec![0.0; bh];
        let wh = self.w_h.value.data();

        for ti in (0..t).rev() {
            let base = ti * bh;
            for bi in 0..b {
                for j in 0..h {
                    dh[bi * h + j] = dy.data()[(bi * t + ti) * h + j] + dh_next[bi * h + j];
                }
            }
            let cs = &cache.c[base..base + bh];
            let os = &cache.o[base..base + bh];
            match self.variant {
                LstmVariant::CellOutput => {
                    for k in 0..bh {
                        let s = sigmoid(cs[k]);
                        dao[k] = dh[k] * s * os[k] * (1.0 - os[k]);
                        dc[k] = dc_next[k] + dh[k] * os[k] * s * (1.0 - s);
                    }
                    let woc = self.w_oc.as_mut().expect("cell-output variant has w_oc");
                    gemm_nt(b, h, h, &dao, woc.value.data(), &mut dc);
                    gemm_tn(b, h, h, cs, &dao, woc.grad.data_mut());
                }
                LstmVariant::Standard => {
                    for k in 0..bh {
                        let th = cs[k].tanh();
                        dao[k] = dh[k] * th * os[k] * (1.0 - os[k]);
                        dc[k] = dc_next[k] + dh[k] * os[k] * (1.0 - th * th);
                    }
                }
            }
            for bi in 0..b {
                for j in 0..h {
                    let k = bi * h + j;
                    let kk = base + k;
                    let (f, i, g) = (cache.f[kk], cache.i[kk], cache.g[kk]);
                    let c_prev = if ti == 0 { 0.0 } else { cache.c[kk - bh] };
                    let zr = &mut dz[bi * 4 * h..(bi + 1) * 4 * h];
                    zr[j] = dc[k] * c_prev * f * (1.0 - f);
                    zr[h + j] = dc[k] * g * i * (1.0 - i);
                    zr[2 * h + j] = dc[k] * i * (1.0 - g * g);
                    zr[3 * h + j] = dao[k];
                    dc_next[k] = dc[k] * f;
                }
            }
            for row in dz.chunks(4 * h) {
                for (d, v) in self.bias.grad.data_mut().iter_mut().zip(row) {
                    *d += v;
                }
            }
            dh_next.fill(0.0);
            if ti > 0 {
                let h_prev = &cache.h[base - bh..base];
                gemm_tn(b, h, 4 * h, h_prev, &dz, self.w_h.grad.data_mut());
                gemm_nt(b, h, 4 * h, &dz, wh, &mut dh_next);
            }
            for bi in 0..b {
                let dst = &mut dzx[(bi * t + ti) * gx * h..(bi * t + ti + 1) * gx * h];
                dst.copy_from_slice(&dz[bi * 4 * h..bi * 4 * h + gx * h]);
            }
        }
        gemm_tn(b * t, n, gx * h, cache.x.data(), &dzx, self.w_x.grad.data_mut());
        let mut dx = vec![0.0; b * t * n];
        gemm_nt(b * t, n, gx * h, &dzx, self.w_x.value.data(), &mut dx);
        Tensor::new(vec![b, t, n], dx)
    }
}
