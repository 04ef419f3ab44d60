//! Aligning feature rows with labels and cutting them into model inputs.

use lobtrend::labels::NUM_CLASSES;
use lobtrend::{FeatureMatrix, LabelSeries};

use crate::tensor::{NnError, Tensor};
use crate::Result;

/// One day of feature rows, each paired with the class of the snapshot it
/// was computed from (`None` where no label exists).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub day_id: String,
    pub width: usize,
    pub features: Vec<f64>,
    pub targets: Vec<Option<usize>>,
}

impl LabeledSequence {
    pub fn new(day_id: impl Into<String>, width: usize, features: Vec<f64>, targets: Vec<Option<usize>>) -> Result<Self> {
        if width == 0 || features.len() != width * targets.len() {
            return Err(NnError::Data(format!(
                "{} feature values do not form {} rows of width {width}",
                features.len(),
                targets.len()
            )));
        }
        if targets.iter().flatten().any(|&c| c >= NUM_CLASSES) {
            return Err(NnError::Data("target class out of range".into()));
        }
        Ok(LabeledSequence {
            day_id: day_id.into(),
            width,
            features,
            targets,
        })
    }

    /// Pairs feature row `r` with the label of snapshot `features.index[r]`.
    pub fn align(features: &FeatureMatrix, labels: &LabelSeries) -> Result<Self> {
        let targets: Vec<Option<usize>> = features
            .index
            .iter()
            .map(|&t| labels.label(t).map(|l| l.class_index()))
            .collect();
        if targets.iter().all(Option::is_none) {
            return Err(NnError::Data(format!(
                "no feature row of day {} has a label",
                features.day_id
            )));
        }
        Self::new(features.day_id.clone(), features.width(), features.data().to_vec(), targets)
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.features[r * self.width..(r + 1) * self.width]
    }

    pub fn class_counts(&self) -> [u64; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for t in self.targets.iter().flatten() {
            c[*t] += 1;
        }
        c
    }
}

/// A training window over one sequence. Steps before `first_target`
/// (relative to `start`) carry no loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub seq: usize,
    pub start: usize,
    pub first_target: usize,
}

/// Windows of `window` steps advancing by `window - burn_in`, so that every
/// row from `burn_in` on is a target of exactly one window. The last window
/// is pinned to the end of the sequence and masks rows already covered.
pub fn temporal_windows(seqs: &[LabeledSequence], window: usize, burn_in: usize) -> Result<Vec<WindowRef>> {
    if burn_in >= window {
        return Err(NnError::Config(format!(
            "burn-in {burn_in} leaves nothing of a {window}-step window"
        )));
    }
    let stride = window - burn_in;
    let mut out = Vec::new();
    for (si, s) in seqs.iter().enumerate() {
        let n = s.rows();
        if n < window {
            log::warn!("day {} has {n} rows, fewer than the window of {window}; skipped", s.day_id);
            continue;
        }
        let mut start = 0;
        loop {
            out.push(WindowRef {
                seq: si,
                start,
                first_target: burn_in,
            });
            let covered = start + window;
            if covered == n {
                break;
            }
            if covered + stride > n {
                let last = n - window;
                out.push(WindowRef {
                    seq: si,
                    start: last,
                    first_target: covered - last,
                });
                break;
            }
            start += stride;
        }
    }
    Ok(out)
}

/// Non-overlapping windows with every labelled step targeted.
pub fn profile_windows(seqs: &[LabeledSequence], window: usize) -> Vec<WindowRef> {
    let mut out = Vec::new();
    for (si, s) in seqs.iter().enumerate() {
        let mut start = 0;
        while start + window <= s.rows() {
            out.push(WindowRef {
                seq: si,
                start,
                first_target: 0,
            });
            start += window;
        }
    }
    out
}

/// `(B, T, F)` inputs and `B·T` targets for a set of windows.
pub fn temporal_batch(seqs: &[LabeledSequence], refs: &[WindowRef], window: usize) -> Result<(Tensor, Vec<Option<usize>>)> {
    let width = seqs
        .first()
        .map(|s| s.width)
        .ok_or_else(|| NnError::Data("no sequences".into()))?;
    let mut x = Vec::with_capacity(refs.len() * window * width);
    let mut targets = Vec::with_capacity(refs.len() * window);
    for w in refs {
        let s = &seqs[w.seq];
        x.extend_from_slice(&s.features[w.start * width..(w.start + window) * width]);
        for t in 0..window {
            targets.push(if t < w.first_target { None } else { s.targets[w.start + t] });
        }
    }
    Ok((Tensor::new(vec![refs.len(), window, width], x)?, targets))
}

/// A flattened window ending at row `end` (inclusive) of sequence `seq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatRef {
    pub seq: usize,
    pub end: usize,
}

/// Every `stride`-th labelled row with at least `window - 1` rows before it.
pub fn flat_windows(seqs: &[LabeledSequence], window: usize, stride: usize) -> Vec<FlatRef> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for (si, s) in seqs.iter().enumerate() {
        if s.rows() < window {
            continue;
        }
        out.extend(
            (window - 1..s.rows())
                .step_by(stride)
                .filter(|&e| s.targets[e].is_some())
                .map(|end| FlatRef { seq: si, end }),
        );
    }
    out
}

/// `(B, window·F)` inputs, oldest step first, and the label of each last step.
pub fn flat_batch(seqs: &[LabeledSequence], refs: &[FlatRef], window: usize) -> Result<(Tensor, Vec<Option<usize>>)> {
    let width = seqs
        .first()
        .map(|s| s.width)
        .ok_or_else(|| NnError::Data("no sequences".into()))?;
    let mut x = Vec::with_capacity(refs.len() * window * width);
    let mut targets = Vec::with_capacity(refs.len());
    for r in refs {
        let s = &seqs[r.seq];
        let start = r.end + 1 - window;
        x.extend_from_slice(&s.features[start * width..(r.end + 1) * width]);
        targets.push(s.targets[r.end]);
    }
    Ok((Tensor::new(vec![refs.len(), window * width], x)?, targets))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: usize) -> LabeledSequence {
        LabeledSequence::new(
            "d",
            2,
            (0..rows * 2).map(|v| v as f64).collect(),
            (0..rows).map(|r| Some(r % 3)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn temporal_windows_target_each_row_once() {
        for rows in [10, 17, 23, 30] {
            let seqs = vec![seq(rows)];
            let refs = temporal_windows(&seqs, 10, 4).unwrap();
            let mut hits = vec![0; rows];
            for w in &refs {
                for t in w.first_target..10 {
                    hits[w.start + t] += 1;
                }
            }
            assert!(hits[..4].iter().all(|&h| h == 0));
            assert!(hits[4..].iter().all(|&h| h == 1), "{rows}: {hits:?}");
        }
    }

    #[test]
    fn temporal_batch_masks_burn_in() {
        let seqs = vec![seq(12)];
        let refs = temporal_windows(&seqs, 6, 2).unwrap();
        let (x, t) = temporal_batch(&seqs, &refs[..1], 6).unwrap();
        assert_eq!(x.shape(), &[1, 6, 2]);
        assert_eq!(&t[..3], &[None, None, Some(2)]);
    }

    #[test]
    fn flat_windows_end_at_labelled_rows() {
        let mut s = seq(8);
        s.targets[7] = None;
        let seqs = vec![s];
        let refs = flat_windows(&seqs, 3, 1);
        assert_eq!(refs.iter().map(|r| r.end).collect::<Vec<_>>(), vec![2, 3, 4, 5, 6]);
        let (x, t) = flat_batch(&seqs, &refs[..1], 3).unwrap();
        assert_eq!(x.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(t, vec![Some(2)]);
    }

    #[test]
    fn burn_in_must_leave_room() {
        assert!(temporal_windows(&[seq(20)], 5, 5).is_err());
    }
}
