//! Class-weighted cross entropy on predicted distributions.

use lobtrend::ClassWeights;

use crate::tensor::{shape_err, NnError, Tensor};
use crate::Result;

pub const PROB_CLIP: f64 = 1e-7;
pub const DISTRIBUTION_TOL: f64 = 1e-6;
/// Keeps `-w / ŷ` finite when a probability underflows to zero.
const GRAD_FLOOR: f64 = 1e-300;

/// Loss and gradient with respect to the predicted probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Sum over all targeted rows.
    pub total: f64,
    /// Number of rows that had a target.
    pub counted: usize,
    /// Loss of each row; zero for rows without a target.
    pub per_row: Vec<f64>,
    pub grad: Tensor,
}

/// `L = -Σ w[y_r] · ln(clip(ŷ[r, y_r]))` over rows whose target is `Some`.
///
/// `probs` has any shape whose last axis is the class axis; `targets` has one
/// entry per row. Probabilities are clipped to `[1e-7, 1 - 1e-7]` in the loss
/// value only. The gradient is `-w / ŷ` everywhere, so a saturated softmax
/// still receives `-w (onehot - ŷ)` at its logits.
pub fn weighted_cross_entropy(
    probs: &Tensor,
    targets: &[Option<usize>],
    weights: &ClassWeights,
) -> Result<LossOutput> {
    let c = probs.last_dim();
    if c != weights.0.len() || probs.rows() != targets.len() {
        return Err(shape_err(
            "weighted_cross_entropy",
            format!("{} rows of {} classes", targets.len(), weights.0.len()),
            probs.shape(),
        ));
    }
    let mut grad = Tensor::zeros(probs.shape());
    let mut per_row = vec![0.0; targets.len()];
    let mut total = 0.0;
    let mut counted = 0;
    for (r, (row, target)) in probs.data().chunks(c).zip(targets).enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOL || row.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NotADistribution { row: r, sum });
        }
        let Some(y) = *target else { continue };
        if y >= c {
            return Err(NnError::Data(format!("target class {y} out of range")));
        }
        let p = row[y];
        let clipped = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        let w = weights.0[y];
        let l = -w * clipped.ln();
        per_row[r] = l;
        total += l;
        counted += 1;
        grad.data_mut()[r * c + y] = -w / p.max(GRAD_FLOOR);
    }
    Ok(LossOutput {
        total,
        counted,
        per_row,
        grad,
    })
}
