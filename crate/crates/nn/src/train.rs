//! Training loop, evaluation and per-epoch metric records.

use lobtrend::labels::{LabelError, Trend, NUM_CLASSES};
use lobtrend::{ClassWeights, ConfusionMatrix};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{flat_batch, flat_windows, profile_windows, temporal_batch, temporal_windows, LabeledSequence};
use crate::layers::Mode;
use crate::loss::weighted_cross_entropy;
use crate::model::{Architecture, Model, ModelSpec};
use crate::optim::{RmsProp, RmsPropConfig};
use crate::svm::{LinearSvm, SvmConfig};
use crate::tensor::{NnError, Tensor};
use crate::Result;

pub const DEFAULT_BURN_IN: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: RmsPropConfig,
    pub svm: SvmConfig,
    /// Masked prefix of each temporal window; `None` picks 100 for temporal
    /// models and 0 otherwise.
    pub burn_in: Option<usize>,
    /// Spacing of the flattened windows used by the MLP and SVM.
    pub flat_stride: usize,
    pub weighted_loss: bool,
    /// After each epoch, set batch-norm running estimates to the exact
    /// moments over the training windows at the current weights.
    pub refresh_bn_stats: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 64,
            optimizer: RmsPropConfig::default(),
            svm: SvmConfig::default(),
            burn_in: None,
            flat_stride: 1,
            weighted_loss: true,
            refresh_bn_stats: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn burn_in_for(&self, arch: Architecture) -> usize {
        self.burn_in
            .unwrap_or(if arch.is_temporal() { DEFAULT_BURN_IN } else { 0 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(NnError::Config("batch size must be positive".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub kappa: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub f1_of_means: f64,
    pub accuracy: f64,
    /// Mean loss per evaluated step.
    pub loss: f64,
    pub steps: u64,
}

impl EpochRecord {
    pub fn from_confusion(epoch: usize, split: Split, cm: &ConfusionMatrix, loss_sum: f64) -> Self {
        let m = cm.macro_scores();
        let steps = cm.total();
        EpochRecord {
            epoch,
            split,
            kappa: cm.kappa(),
            recall: m.recall,
            precision: m.precision,
            f1: m.f1,
            f1_of_means: m.f1_of_means,
            accuracy: cm.accuracy(),
            loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
            steps,
        }
    }
}

/// Mean metrics over the last `n` epochs of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub epochs: usize,
    pub kappa: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub f1_of_means: f64,
    pub loss: f64,
}

pub fn mean_of_last(records: &[EpochRecord], split: Split, n: usize) -> Option<MetricSummary> {
    let rows: Vec<&EpochRecord> = records.iter().filter(|r| r.split == split).collect();
    let tail = &rows[rows.len().saturating_sub(n)..];
    if tail.is_empty() {
        return None;
    }
    let k = tail.len() as f64;
    let avg = |f: fn(&EpochRecord) -> f64| tail.iter().map(|r| f(r)).sum::<f64>() / k;
    Some(MetricSummary {
        epochs: tail.len(),
        kappa: avg(|r| r.kappa),
        recall: avg(|r| r.recall),
        precision: avg(|r| r.precision),
        f1: avg(|r| r.f1),
        f1_of_means: avg(|r| r.f1_of_means),
        loss: avg(|r| r.loss),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trained {
    Neural { model: Model, optimizer: RmsProp },
    Svm(LinearSvm),
}

/// Mean loss at each position of a window, over unmasked windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossProfile {
    pub mean: Vec<f64>,
    pub count: Vec<u64>,
}

impl LossProfile {
    /// Mean over positions `range`, weighted by their counts.
    pub fn mean_over(&self, range: std::ops::Range<usize>) -> f64 {
        let mut s = 0.0;
        let mut c = 0u64;
        for t in range {
            s += self.mean[t] * self.count[t] as f64;
            c += self.count[t];
        }
        if c == 0 {
            0.0
        } else {
            s / c as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub trained: Trained,
    pub records: Vec<EpochRecord>,
    pub class_weights: ClassWeights,
}

fn total_counts(seqs: &[LabeledSequence]) -> [u64; NUM_CLASSES] {
    let mut c = [0; NUM_CLASSES];
    for s in seqs {
        for (a, b) in c.iter_mut().zip(s.class_counts()) {
            *a += b;
        }
    }
    c
}

/// Class weights from the targets of the training days.
pub fn training_weights(seqs: &[LabeledSequence], weighted: bool) -> Result<ClassWeights> {
    let counts = total_counts(seqs);
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(LabelError::AbsentClass(Trend::from_class_index(c).unwrap()).into());
    }
    if weighted {
        Ok(ClassWeights::from_counts(counts)?)
    } else {
        Ok(ClassWeights::uniform())
    }
}

fn check_widths(spec: &ModelSpec, seqs: &[LabeledSequence]) -> Result<()> {
    if let Some(s) = seqs.iter().find(|s| s.width != spec.features) {
        return Err(NnError::Data(format!(
            "day {} has feature width {}, model expects {}",
            s.day_id, s.width, spec.features
        )));
    }
    Ok(())
}

fn record_predictions(cm: &mut ConfusionMatrix, probs: &Tensor, targets: &[Option<usize>]) {
    for (pred, t) in probs.argmax_rows().into_iter().zip(targets) {
        if let Some(t) = t {
            cm.record_index(*t, pred);
        }
    }
}

/// Trains `spec` on `train` and evaluates on `test` after every epoch.
enum Refs {
    Temporal(Vec<crate::data::WindowRef>),
    Flat(Vec<crate::data::FlatRef>),
}

pub fn train(spec: &ModelSpec, train: &[LabeledSequence], test: &[LabeledSequence], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    check_widths(spec, train)?;
    check_widths(spec, test)?;
    let weights = training_weights(train, cfg.weighted_loss)?;
    if spec.architecture == Architecture::LinearSvm {
        return train_svm(spec, train, test, cfg, weights);
    }
    let mut model = Model::build(spec.clone(), cfg.seed)?;
    let mut optimizer = RmsProp::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5851_f42d_4c95_7f2d));
    let burn_in = cfg.burn_in_for(spec.architecture);
    let mut records = Vec::with_capacity(2 * cfg.epochs);

    let make_refs = |seqs: &[LabeledSequence]| -> Result<Refs> {
        Ok(if spec.architecture.is_temporal() {
            Refs::Temporal(temporal_windows(seqs, spec.window, burn_in)?)
        } else {
            Refs::Flat(flat_windows(seqs, spec.window, cfg.flat_stride))
        })
    };
    let mut train_refs = make_refs(train)?;
    // fixed order, so refreshed statistics depend on the weights only
    let refresh_refs = make_refs(train)?;
    let test_refs = make_refs(test)?;
    let n_train = match &train_refs {
        Refs::Temporal(v) => v.len(),
        Refs::Flat(v) => v.len(),
    };
    if n_train == 0 {
        return Err(NnError::Data("no training windows".into()));
    }

    for epoch in 1..=cfg.epochs {
        match &mut train_refs {
            Refs::Temporal(v) => v.shuffle(&mut rng),
            Refs::Flat(v) => v.shuffle(&mut rng),
        }
        let mut cm = ConfusionMatrix::new();
        let mut loss_sum = 0.0;
        for b in (0..n_train).step_by(cfg.batch_size) {
            let e = (b + cfg.batch_size).min(n_train);
            let (x, targets) = match &train_refs {
                Refs::Temporal(v) => temporal_batch(train, &v[b..e], spec.window)?,
                Refs::Flat(v) => flat_batch(train, &v[b..e], spec.window)?,
            };
            if targets.iter().all(Option::is_none) {
                continue;
            }
            let probs = model.forward(&x, Mode::Train)?;
            let loss = weighted_cross_entropy(&probs, &targets, &weights)?;
            record_predictions(&mut cm, &probs, &targets);
            loss_sum += loss.total;
            model.zero_grad();
            model.backward(&loss.grad)?;
            optimizer.step(model.params_mut())?;
        }
        records.push(EpochRecord::from_confusion(epoch, Split::Train, &cm, loss_sum));
        if cfg.refresh_bn_stats && model.has_batch_norm() {
            refresh_bn(&mut model, train, &refresh_refs, cfg.batch_size)?;
        }
        if !test.is_empty() {
            let (cm, loss) = match &test_refs {
                Refs::Temporal(v) => evaluate_temporal(&mut model, test, v, &weights, cfg.batch_size)?,
                Refs::Flat(v) => evaluate_flat(&mut model, test, v, &weights, cfg.batch_size)?,
            };
            records.push(EpochRecord::from_confusion(epoch, Split::Test, &cm, loss));
        }
        if let Some(r) = records.last() {
            log::debug!(
                "{} epoch {epoch}: {} kappa {:.4} f1 {:.4} loss {:.4}",
                spec.architecture,
                r.split.as_str(),
                r.kappa,
                r.f1,
                r.loss
            );
        }
    }
    Ok(TrainOutcome {
        trained: Trained::Neural { model, optimizer },
        records,
        class_weights: weights,
    })
}

fn refresh_bn(model: &mut Model, seqs: &[LabeledSequence], refs: &Refs, batch: usize) -> Result<()> {
    let window = model.spec().window;
    match refs {
        Refs::Temporal(v) => {
            let chunks: Vec<_> = v.chunks(batch).collect();
            model.refresh_batch_norm(chunks.len(), |i| Ok(temporal_batch(seqs, chunks[i], window)?.0))
        }
        Refs::Flat(v) => {
            let chunks: Vec<_> = v.chunks(batch).collect();
            model.refresh_batch_norm(chunks.len(), |i| Ok(flat_batch(seqs, chunks[i], window)?.0))
        }
    }
}

fn evaluate_temporal(
    model: &mut Model,
    seqs: &[LabeledSequence],
    refs: &[crate::data::WindowRef],
    weights: &ClassWeights,
    batch: usize,
) -> Result<(ConfusionMatrix, f64)> {
    let mut cm = ConfusionMatrix::new();
    let mut loss = 0.0;
    for chunk in refs.chunks(batch) {
        let (x, targets) = temporal_batch(seqs, chunk, model.spec().window)?;
        let probs = model.forward(&x, Mode::Infer)?;
        loss += weighted_cross_entropy(&probs, &targets, weights)?.total;
        record_predictions(&mut cm, &probs, &targets);
    }
    Ok((cm, loss))
}

fn evaluate_flat(
    model: &mut Model,
    seqs: &[LabeledSequence],
    refs: &[crate::data::FlatRef],
    weights: &ClassWeights,
    batch: usize,
) -> Result<(ConfusionMatrix, f64)> {
    let mut cm = ConfusionMatrix::new();
    let mut loss = 0.0;
    for chunk in refs.chunks(batch) {
        let (x, targets) = flat_batch(seqs, chunk, model.spec().window)?;
        let probs = model.forward(&x, Mode::Infer)?;
        loss += weighted_cross_entropy(&probs, &targets, weights)?.total;
        record_predictions(&mut cm, &probs, &targets);
    }
    Ok((cm, loss))
}

/// Confusion matrix and summed loss of a neural model on `seqs`, using the
/// same windowing as training.
pub fn evaluate(model: &mut Model, seqs: &[LabeledSequence], weights: &ClassWeights, burn_in: usize, batch: usize) -> Result<(ConfusionMatrix, f64)> {
    check_widths(model.spec(), seqs)?;
    let spec = model.spec().clone();
    if spec.architecture.is_temporal() {
        let refs = temporal_windows(seqs, spec.window, burn_in)?;
        evaluate_temporal(model, seqs, &refs, weights, batch.max(1))
    } else {
        let refs = flat_windows(seqs, spec.window, 1);
        evaluate_flat(model, seqs, &refs, weights, batch.max(1))
    }
}

/// Confusion matrix of an SVM on every labelled flattened window.
pub fn evaluate_svm(svm: &LinearSvm, spec: &ModelSpec, seqs: &[LabeledSequence], stride: usize) -> Result<(ConfusionMatrix, f64)> {
    let refs = flat_windows(seqs, spec.window, stride);
    let mut cm = ConfusionMatrix::new();
    let mut loss = 0.0;
    for chunk in refs.chunks(256) {
        let (x, targets) = flat_batch(seqs, chunk, spec.window)?;
        for ((row, pred), t) in x
            .data()
            .chunks(spec.flat_width())
            .zip(svm.predict(&x)?)
            .zip(&targets)
        {
            if let Some(t) = *t {
                cm.record_index(t, pred);
                loss += svm.hinge(row, t);
            }
        }
    }
    Ok((cm, loss))
}

fn train_svm(
    spec: &ModelSpec,
    train: &[LabeledSequence],
    test: &[LabeledSequence],
    cfg: &TrainConfig,
    weights: ClassWeights,
) -> Result<TrainOutcome> {
    let mut svm = LinearSvm::new(spec.flat_width(), NUM_CLASSES);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5851_f42d_4c95_7f2d));
    let mut refs = flat_windows(train, spec.window, cfg.flat_stride);
    if refs.is_empty() {
        return Err(NnError::Data("no training windows".into()));
    }
    let mut records = Vec::with_capacity(2 * cfg.epochs);
    for epoch in 1..=cfg.epochs {
        refs.shuffle(&mut rng);
        let mut cm = ConfusionMatrix::new();
        let mut loss = 0.0;
        for chunk in refs.chunks(256) {
            let (x, targets) = flat_batch(train, chunk, spec.window)?;
            for (row, t) in x.data().chunks(spec.flat_width()).zip(&targets) {
                let Some(t) = *t else { continue };
                loss += svm.hinge(row, t);
                let scores = svm.step(row, t, weights.0[t], &cfg.svm)?;
                let pred = Tensor::new(vec![1, NUM_CLASSES], scores)?.argmax_rows()[0];
                cm.record_index(t, pred);
            }
        }
        if !svm.weight.all_finite() {
            return Err(NnError::NonFinite {
                layer: "linear_svm".into(),
                stage: "update",
            });
        }
        records.push(EpochRecord::from_confusion(epoch, Split::Train, &cm, loss));
        if !test.is_empty() {
            let (cm, loss) = evaluate_svm(&svm, spec, test, cfg.flat_stride)?;
            records.push(EpochRecord::from_confusion(epoch, Split::Test, &cm, loss));
        }
    }
    Ok(TrainOutcome {
        trained: Trained::Svm(svm),
        records,
        class_weights: weights,
    })
}

/// Per-position mean loss of a temporal model over non-overlapping windows
/// with no burn-in mask.
pub fn loss_profile(model: &mut Model, seqs: &[LabeledSequence], weights: &ClassWeights, batch: usize) -> Result<LossProfile> {
    let t = model.spec().window;
    if !model.spec().architecture.is_temporal() {
        return Err(NnError::Config("loss profile needs a temporal model".into()));
    }
    let refs = profile_windows(seqs, t);
    let mut sum = vec![0.0; t];
    let mut count = vec![0u64; t];
    for chunk in refs.chunks(batch.max(1)) {
        let (x, targets) = temporal_batch(seqs, chunk, t)?;
        let probs = model.forward(&x, Mode::Infer)?;
        let out = weighted_cross_entropy(&probs, &targets, weights)?;
        for (r, (l, tg)) in out.per_row.iter().zip(&targets).enumerate() {
            if tg.is_some() {
                sum[r % t] += l;
                count[r % t] += 1;
            }
        }
    }
    let mean = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(LossProfile { mean, count })
}
