use lobtrend_nn::data::LabeledSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Rows of width `width` whose class is drawn with probabilities `mix`; the
/// first feature carries the class mean (-1, 0, +1) plus unit noise.
pub fn gaussian_day(id: &str, rows: usize, width: usize, mix: [f64; 3], seed: u64) -> LabeledSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut features = Vec::with_capacity(rows * width);
    let mut targets = Vec::with_capacity(rows);
    for _ in 0..rows {
        let u: f64 = rng.random();
        let c = if u < mix[0] {
            0
        } else if u < mix[0] + mix[1] {
            1
        } else {
            2
        };
        for j in 0..width {
            let centre = if j == 0 { c as f64 - 1.0 } else { 0.0 };
            features.push(centre + noise.sample(&mut rng));
        }
        targets.push(Some(c));
    }
    LabeledSequence::new(id, width, features, targets).unwrap()
}

/// A day where the class is a persistent hidden state visible only through
/// the running sum of the inputs.
pub fn drifting_day(id: &str, rows: usize, width: usize, seed: u64) -> LabeledSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(rows * width);
    let mut targets = Vec::with_capacity(rows);
    let mut state = 1usize;
    for _ in 0..rows {
        if rng.random_bool(0.02) {
            state = rng.random_range(0..3);
        }
        for j in 0..width {
            let drift = if j == 0 { 0.3 * (state as f64 - 1.0) } else { 0.0 };
            features.push(drift + rng.random_range(-1.0..1.0));
        }
        targets.push(Some(state));
    }
    LabeledSequence::new(id, width, features, targets).unwrap()
}
