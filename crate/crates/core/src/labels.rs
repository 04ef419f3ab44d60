//! Mid-price trend labels.
//!
//! The label at step `t` compares the mean of the next `k` mid-prices with the
//! current mid-price:
//!
//! ```text
//! m_a(t) = (1/k) * sum_{i=1..k} p(t+i)
//! l(t)   = +1 if m_a(t)/p(t) > 1 + alpha
//!          -1 if m_a(t)/p(t) < 1 - alpha
//!           0 otherwise
//! ```
//!
//! Only steps with a complete future window carry a label, so a series of
//! length `n` has labels for `t` in `0..n-k`.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("step {t} with horizon {k} needs {needed} prices, series has {len}")]
    OutOfRange {
        t: usize,
        k: usize,
        needed: usize,
        len: usize,
    },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("series of length {len} is too short for horizon {k}")]
    SeriesTooShort { len: usize, k: usize },
    #[error("alpha must be a finite non-negative number, got {0}")]
    BadAlpha(f64),
    #[error("price at step {0} is not positive")]
    NonPositivePrice(usize),
    #[error("no labels in the valid range")]
    Empty,
    #[error("class {0} has no samples; drop or merge it before weighting")]
    AbsentClass(Trend),
    #[error("target stationary fraction must lie in (0, 1], got {0}")]
    BadTarget(f64),
    #[error("cannot reach stationary fraction {target} (best {achieved:.4} at alpha {alpha:e})")]
    CalibrationFailed {
        target: f64,
        achieved: f64,
        alpha: f64,
    },
    #[error("label value {0} is not one of -1, 0, 1")]
    BadLabel(i64),
    #[error("label file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for LabelError {
    fn from(e: std::io::Error) -> Self {
        LabelError::Io(e.to_string())
    }
}

/// Direction of the mid-price over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Trend {
    Down,
    Stationary,
    Up,
}

impl Trend {
    pub const ALL: [Trend; NUM_CLASSES] = [Trend::Down, Trend::Stationary, Trend::Up];

    pub fn as_i8(self) -> i8 {
        match self {
            Trend::Down => -1,
            Trend::Stationary => 0,
            Trend::Up => 1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Trend> {
        match v {
            -1 => Some(Trend::Down),
            0 => Some(Trend::Stationary),
            1 => Some(Trend::Up),
            _ => None,
        }
    }

    /// Position in a 3-way class vector: down, stationary, up.
    pub fn class_index(self) -> usize {
        match self {
            Trend::Down => 0,
            Trend::Stationary => 1,
            Trend::Up => 2,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Trend> {
        Trend::ALL.get(i).copied()
    }
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_i8())
    }
}

fn check_positive(p: &[f64]) -> Result<(), LabelError> {
    match p.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        Some(i) => Err(LabelError::NonPositivePrice(i)),
        None => Ok(()),
    }
}

/// Mean of the `k` strictly-future prices after `t`.
pub fn future_mean(p: &[f64], t: usize, k: usize) -> Result<f64, LabelError> {
    if k == 0 {
        return Err(LabelError::ZeroHorizon);
    }
    if t + k >= p.len() {
        return Err(LabelError::OutOfRange {
            t,
            k,
            needed: t + k + 1,
            len: p.len(),
        });
    }
    Ok(p[t + 1..=t + k].iter().sum::<f64>() / k as f64)
}

/// Mean of the current and `k` previous prices.
pub fn past_mean(p: &[f64], t: usize, k: usize) -> Result<f64, LabelError> {
    if t < k || t >= p.len() {
        return Err(LabelError::OutOfRange {
            t,
            k,
            needed: k + 1,
            len: p.len(),
        });
    }
    Ok(p[t - k..=t].iter().sum::<f64>() / (k + 1) as f64)
}

/// Relative deviation `m_a(t)/p(t) - 1` for every labelable step.
///
/// Accumulates `p(t+i) - p(t)` so that a flat future window gives exactly 0.
pub fn future_deviations(p: &[f64], k: usize) -> Result<Vec<f64>, LabelError> {
    if k == 0 {
        return Err(LabelError::ZeroHorizon);
    }
    if p.len() <= k {
        return Err(LabelError::SeriesTooShort { len: p.len(), k });
    }
    check_positive(p)?;
    let kf = k as f64;
    Ok((0..p.len() - k)
        .map(|t| {
            let now = p[t];
            let excess: f64 = p[t + 1..=t + k].iter().map(|&x| x - now).sum();
            excess / kf / now
        })
        .collect())
}

fn classify(deviation: f64, alpha: f64) -> Trend {
    if deviation > alpha {
        Trend::Up
    } else if deviation < -alpha {
        Trend::Down
    } else {
        Trend::Stationary
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSeries {
    labels: Vec<Trend>,
    pub horizon: usize,
    pub alpha: f64,
    /// Steps `t` (indices into the price series) that carry a label.
    pub valid_range: Range<usize>,
}

impl LabelSeries {
    pub fn from_labels(labels: Vec<Trend>, horizon: usize, alpha: f64) -> Self {
        let n = labels.len();
        LabelSeries {
            labels,
            horizon,
            alpha,
            valid_range: 0..n,
        }
    }

    /// Label at price index `t`, `None` outside the valid range.
    pub fn label(&self, t: usize) -> Option<Trend> {
        if self.valid_range.contains(&t) {
            Some(self.labels[t - self.valid_range.start])
        } else {
            None
        }
    }

    pub fn labels(&self) -> &[Trend] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn counts(&self) -> [u64; NUM_CLASSES] {
        count_classes(self.labels.iter().copied())
    }

    /// `# horizon=K alpha=A` header, then `t,label` lines.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "# horizon={} alpha={} start={} end={}",
            self.horizon, self.alpha, self.valid_range.start, self.valid_range.end
        )?;
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(w, "{},{}", self.valid_range.start + i, l)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self, LabelError> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| LabelError::Format("missing header".into()))??;
        let rest = header
            .strip_prefix("# ")
            .ok_or_else(|| LabelError::Format("bad header".into()))?;
        let mut horizon = None;
        let mut alpha = None;
        let mut start = 0;
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("horizon", v)) => horizon = v.parse::<usize>().ok(),
                Some(("alpha", v)) => alpha = v.parse::<f64>().ok(),
                Some(("start", v)) => start = v.parse::<usize>().unwrap_or(0),
                _ => {}
            }
        }
        let horizon = horizon.ok_or_else(|| LabelError::Format("header lacks horizon".into()))?;
        let alpha = alpha.ok_or_else(|| LabelError::Format("header lacks alpha".into()))?;
        let mut labels = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (t, l) = line
                .split_once(',')
                .ok_or_else(|| LabelError::Format(format!("bad line {line:?}")))?;
            let t: usize = t
                .trim()
                .parse()
                .map_err(|_| LabelError::Format(format!("bad index {t:?}")))?;
            if t != start + labels.len() {
                return Err(LabelError::Format(format!("non-contiguous index {t}")));
            }
            let v: i64 = l
                .trim()
                .parse()
                .map_err(|_| LabelError::Format(format!("bad label {l:?}")))?;
            let trend = i8::try_from(v)
                .ok()
                .and_then(Trend::from_i8)
                .ok_or(LabelError::BadLabel(v))?;
            labels.push(trend);
        }
        let end = start + labels.len();
        Ok(LabelSeries {
            labels,
            horizon,
            alpha,
            valid_range: start..end,
        })
    }
}

/// Labels every step that has a full `k`-step future window.
pub fn label_series(p: &[f64], k: usize, alpha: f64) -> Result<LabelSeries, LabelError> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(LabelError::BadAlpha(alpha));
    }
    let dev = future_deviations(p, k)?;
    let labels: Vec<Trend> = dev.iter().map(|&d| classify(d, alpha)).collect();
    Ok(LabelSeries {
        valid_range: 0..labels.len(),
        labels,
        horizon: k,
        alpha,
    })
}

pub fn count_classes(labels: impl IntoIterator<Item = Trend>) -> [u64; NUM_CLASSES] {
    let mut c = [0u64; NUM_CLASSES];
    for l in labels {
        c[l.class_index()] += 1;
    }
    c
}

/// Fractions of (down, stationary, up) labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub down: f64,
    pub stationary: f64,
    pub up: f64,
}

impl ClassDistribution {
    pub fn from_counts(c: [u64; NUM_CLASSES]) -> Result<Self, LabelError> {
        let n: u64 = c.iter().sum();
        if n == 0 {
            return Err(LabelError::Empty);
        }
        let n = n as f64;
        Ok(ClassDistribution {
            down: c[0] as f64 / n,
            stationary: c[1] as f64 / n,
            up: c[2] as f64 / n,
        })
    }
}

pub fn class_distribution(l: &LabelSeries) -> Result<ClassDistribution, LabelError> {
    ClassDistribution::from_counts(l.counts())
}

fn stationary_fraction(dev: &[f64], alpha: f64) -> f64 {
    let n = dev.iter().filter(|&&d| d.abs() <= alpha).count();
    n as f64 / dev.len() as f64
}

/// Result of [`calibrate_alpha`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha: f64,
    pub distribution: ClassDistribution,
    pub iterations: usize,
    /// The target needs every label stationary; `alpha` is the largest deviation.
    pub saturated: bool,
}

pub const CALIBRATION_TOLERANCE: f64 = 0.02;
pub const CALIBRATION_MAX_ITER: usize = 50;

/// Bisects `alpha` until the stationary fraction is within
/// [`CALIBRATION_TOLERANCE`] of `target_stationary`.
pub fn calibrate_alpha(
    p: &[f64],
    k: usize,
    target_stationary: f64,
) -> Result<Calibration, LabelError> {
    calibrate_alpha_pooled(&[p], k, target_stationary)
}

/// [`calibrate_alpha`] over the labels of several series at once, e.g. all
/// training days. Windows never cross series boundaries.
pub fn calibrate_alpha_pooled(
    series: &[&[f64]],
    k: usize,
    target_stationary: f64,
) -> Result<Calibration, LabelError> {
    if !(target_stationary > 0.0 && target_stationary <= 1.0) {
        return Err(LabelError::BadTarget(target_stationary));
    }
    let mut dev = Vec::new();
    for p in series {
        dev.extend(future_deviations(p, k)?);
    }
    if dev.is_empty() {
        return Err(LabelError::Empty);
    }
    let max_dev = dev.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let finish = |alpha: f64, iterations: usize, saturated: bool| -> Result<Calibration, LabelError> {
        let counts = count_classes(dev.iter().map(|&d| classify(d, alpha)));
        Ok(Calibration {
            alpha,
            distribution: ClassDistribution::from_counts(counts)?,
            iterations,
            saturated,
        })
    };

    if (1.0 - target_stationary).abs() <= CALIBRATION_TOLERANCE {
        return finish(max_dev, 0, true);
    }
    if max_dev == 0.0 {
        return Err(LabelError::CalibrationFailed {
            target: target_stationary,
            achieved: 1.0,
            alpha: 0.0,
        });
    }

    let (mut lo, mut hi) = (0.0, max_dev);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for iter in 1..=CALIBRATION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let frac = stationary_fraction(&dev, mid);
        let gap = (frac - target_stationary).abs();
        if gap < best.0 {
            best = (gap, frac, mid);
        }
        if gap <= CALIBRATION_TOLERANCE {
            return finish(mid, iter, false);
        }
        if frac < target_stationary {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(LabelError::CalibrationFailed {
        target: target_stationary,
        achieved: best.1,
        alpha: best.2,
    })
}

/// Per-class loss weights `|D| / (n * |D_i|)` with `n = 3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; NUM_CLASSES]);

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights([1.0; NUM_CLASSES])
    }

    pub fn from_counts(counts: [u64; NUM_CLASSES]) -> Result<Self, LabelError> {
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(LabelError::AbsentClass(Trend::ALL[i]));
        }
        let total: u64 = counts.iter().sum();
        let mut w = [0.0; NUM_CLASSES];
        for (wi, &c) in w.iter_mut().zip(&counts) {
            *wi = total as f64 / (NUM_CLASSES as f64 * c as f64);
        }
        Ok(ClassWeights(w))
    }

    pub fn get(&self, t: Trend) -> f64 {
        self.0[t.class_index()]
    }
}

pub fn class_weights(l: &LabelSeries) -> Result<ClassWeights, LabelError> {
    ClassWeights::from_counts(l.counts())
}
