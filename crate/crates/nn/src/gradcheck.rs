//! Central finite-difference checks of analytic gradients.

use lobtrend::ClassWeights;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{LayerNode, Mode};
use crate::loss::weighted_cross_entropy;
use crate::model::Model;
use crate::tensor::Tensor;
use crate::Result;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that two gradients that are
/// both essentially zero compare as equal.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor and flat index of the worst entry.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            worst: String::new(),
            checked: 0,
        }
    }

    fn record(&mut self, what: &str, idx: usize, analytic: f64, numeric: f64) {
        let rel = relative_error(analytic, numeric);
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = format!("{what}[{idx}] analytic {analytic:e} numeric {numeric:e}");
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn chosen(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, max).into_vec();
        v.sort_unstable();
        v
    }
}

/// Checks one layer under the loss `Σ r ⊙ layer(x)` with a random `r`.
///
/// Every evaluation starts from a clone of `layer`, so dropout masks and
/// batch statistics are the same in all of them. At most `max_per_tensor`
/// entries of the input and of each parameter are perturbed.
pub fn check_layer(layer: &LayerNode, x: &Tensor, seed: u64, max_per_tensor: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = layer.clone();
    let y = probe.forward(x, Mode::Train)?;
    let r = Tensor::from_fn(y.shape(), |_| rng.random_range(-1.0..1.0));
    probe.zero_grad();
    let dx = probe.backward(&r)?;

    let objective = |l: &LayerNode, input: &Tensor| -> Result<f64> {
        let mut l = l.clone();
        let out = l.forward(input, Mode::Train)?;
        Ok(out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    };

    let mut report = GradCheckReport::new();
    for i in chosen(x.len(), max_per_tensor, &mut rng) {
        let mut xp = x.clone();
        xp.data_mut()[i] += FD_STEP;
        let up = objective(layer, &xp)?;
        xp.data_mut()[i] -= 2.0 * FD_STEP;
        let down = objective(layer, &xp)?;
        report.record("input", i, dx.data()[i], (up - down) / (2.0 * FD_STEP));
    }
    let grads: Vec<(&'static str, Tensor)> = probe.params().iter().map(|p| (p.name, p.grad.clone())).collect();
    for (pi, (name, grad)) in grads.iter().enumerate() {
        for i in chosen(grad.len(), max_per_tensor, &mut rng) {
            let mut l = layer.clone();
            l.params_mut()[pi].value.data_mut()[i] += FD_STEP;
            let up = objective(&l, x)?;
            l.params_mut()[pi].value.data_mut()[i] -= 2.0 * FD_STEP;
            let down = objective(&l, x)?;
            report.record(name, i, grad.data()[i], (up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(report)
}

/// Checks a whole model under the weighted cross entropy of its output.
pub fn check_model(
    model: &Model,
    x: &Tensor,
    targets: &[Option<usize>],
    weights: &ClassWeights,
    seed: u64,
    max_per_tensor: usize,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let y = probe.forward(x, Mode::Train)?;
    let loss = weighted_cross_entropy(&y, targets, weights)?;
    probe.zero_grad();
    let dx = probe.backward(&loss.grad)?;

    let objective = |m: &Model, input: &Tensor| -> Result<f64> {
        let mut m = m.clone();
        let out = m.forward(input, Mode::Train)?;
        Ok(weighted_cross_entropy(&out, targets, weights)?.total)
    };

    let mut report = GradCheckReport::new();
    for i in chosen(x.len(), max_per_tensor, &mut rng) {
        let mut xp = x.clone();
        xp.data_mut()[i] += FD_STEP;
        let up = objective(model, &xp)?;
        xp.data_mut()[i] -= 2.0 * FD_STEP;
        let down = objective(model, &xp)?;
        report.record("input", i, dx.data()[i], (up - down) / (2.0 * FD_STEP));
    }
    let grads: Vec<(String, Tensor)> = probe
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.grad.clone()))
        .collect();
    for (pi, (name, grad)) in grads.iter().enumerate() {
        for i in chosen(grad.len(), max_per_tensor, &mut rng) {
            let mut m = model.clone();
            m.params_mut()[pi].value.data_mut()[i] += FD_STEP;
            let up = objective(&m, x)?;
            m.params_mut()[pi].value.data_mut()[i] -= 2.0 * FD_STEP;
            let down = objective(&m, x)?;
            report.record(name, i, grad.data()[i], (up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(report)
}
