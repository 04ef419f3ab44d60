//! In-memory pipeline stages and their on-disk artifacts.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lobtrend::book::{parse_snapshot_stream, SnapshotSeries, Validation};
use lobtrend::datagen::generate_days;
use lobtrend::features::{fit_norm_stats, fit_raw_stats, raw_features, stationary_features, unnormalized_features, Normalization};
use lobtrend::labels::{calibrate_alpha_pooled, count_classes, label_series, ClassDistribution};
use lobtrend::{ClassWeights, FeatureMatrix, FeatureMode, LabelSeries, NormStats};
use lobtrend_nn::checkpoint::Checkpoint;
use lobtrend_nn::data::LabeledSequence;
use lobtrend_nn::train::{loss_profile, mean_of_last, train, EpochRecord, LossProfile, MetricSummary, Split, Trained};
use serde::{Deserialize, Serialize};

use crate::config::{CellKey, DataConfig, ExperimentConfig};
use crate::error::{CliError, Result};

/// File layout under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn days_manifest(&self) -> PathBuf {
        self.data_dir().join("days.json")
    }

    pub fn features_dir(&self, mode: FeatureMode) -> PathBuf {
        self.root.join("features").join(mode.as_str())
    }

    pub fn stats_manifest(&self, mode: FeatureMode) -> PathBuf {
        self.features_dir(mode).join("stats.json")
    }

    pub fn labels_dir(&self, horizon: usize) -> PathBuf {
        self.root.join("labels").join(format!("k{horizon}"))
    }

    pub fn alphas_file(&self) -> PathBuf {
        self.root.join("labels").join("alphas.json")
    }

    pub fn cell_dir(&self, cell: CellKey) -> PathBuf {
        self.root.join("cells").join(cell.to_string())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

pub(crate) fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(CliError::io(p))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(CliError::io(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serialises");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str, hint: &'static str) -> Result<T> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingInput {
                what,
                path: path.to_path_buf(),
                hint,
            })
        }
        Err(e) => return Err(CliError::io(path)(e)),
    };
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
}

fn open(path: &Path, what: &'static str, hint: &'static str) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::MissingInput {
            what,
            path: path.to_path_buf(),
            hint,
        }),
        Err(e) => Err(CliError::io(path)(e)),
    }
}

/// All days of the stock, in trading order, and where training stops.
#[derive(Debug, Clone)]
pub struct Days {
    pub series: Vec<SnapshotSeries>,
    pub n_train: usize,
}

impl Days {
    pub fn train(&self) -> &[SnapshotSeries] {
        &self.series[..self.n_train]
    }

    pub fn test(&self) -> &[SnapshotSeries] {
        &self.series[self.n_train..]
    }

    pub fn train_ids(&self) -> Vec<String> {
        self.train().iter().map(|s| s.day_id.clone()).collect()
    }
}

/// Generates the synthetic days described by the config.
pub fn synthesize(cfg: &ExperimentConfig) -> Result<Days> {
    let DataConfig::Synth(s) = &cfg.data else {
        return Err(CliError::Config("data.source is not synth".into()));
    };
    let series = generate_days(&s.day_configs(cfg.seed))?;
    let n_train = cfg.split.train_count(series.len())?;
    Ok(Days { series, n_train })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DayEntry {
    day_id: String,
    file: String,
}

pub fn write_days(layout: &Layout, days: &Days) -> Result<()> {
    let dir = layout.data_dir();
    create_dir(&dir)?;
    let mut entries = Vec::new();
    for s in &days.series {
        let file = format!("{}.csv", s.day_id);
        let path = dir.join(&file);
        let mut w = BufWriter::new(File::create(&path).map_err(CliError::io(&path))?);
        s.write_to(&mut w, true).map_err(CliError::io(&path))?;
        w.flush().map_err(CliError::io(&path))?;
        entries.push(DayEntry {
            day_id: s.day_id.clone(),
            file,
        });
    }
    write_json(&layout.days_manifest(), &entries)
}

fn parse_day(path: &Path, stock: &str, day: &str, validation: Validation) -> Result<SnapshotSeries> {
    let reader = open(path, "snapshot file", "synth")?;
    let (series, report) = parse_snapshot_stream(reader, stock, day, validation).map_err(|e| CliError::parse(path, e))?;
    if report.dropped_invalid + report.dropped_out_of_order > 0 {
        log::warn!(
            "{}: dropped {} invalid and {} out-of-order snapshots",
            path.display(),
            report.dropped_invalid,
            report.dropped_out_of_order
        );
    }
    Ok(series)
}

/// Loads the days: the synthetic ones written by `synth`, or the configured files.
pub fn load_days(cfg: &ExperimentConfig, layout: &Layout) -> Result<Days> {
    let series = match &cfg.data {
        DataConfig::Synth(s) => {
            let entries: Vec<DayEntry> = read_json(&layout.days_manifest(), "day manifest", "synth")?;
            entries
                .iter()
                .map(|e| parse_day(&layout.data_dir().join(&e.file), &s.stock_id, &e.day_id, Validation::Strict))
                .collect::<Result<Vec<_>>>()?
        }
        DataConfig::Files {
            paths,
            stock_id,
            lenient,
        } => {
            let validation = if *lenient { Validation::Lenient } else { Validation::Strict };
            paths
                .iter()
                .map(|p| {
                    let day = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .ok_or_else(|| CliError::Config(format!("{} has no file name", p.display())))?;
                    parse_day(p, stock_id, &day, validation)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let n_train = cfg.split.train_count(series.len())?;
    Ok(Days { series, n_train })
}

/// Normalised feature matrices of one mode, split into training and test days.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub mode: FeatureMode,
    pub train: Vec<FeatureMatrix>,
    pub test: Vec<FeatureMatrix>,
    /// Statistics applied to each day, by day id.
    pub stats: BTreeMap<String, NormStats>,
}

impl FeatureSet {
    /// Fails if any day was normalised with statistics from a test day.
    pub fn check_provenance(&self, train_ids: &[String]) -> Result<()> {
        for (day, s) in &self.stats {
            if let Some(bad) = s.provenance.day_ids.iter().find(|d| !train_ids.contains(d)) {
                return Err(CliError::Leak(format!(
                    "{} features of {day} use statistics fitted on {bad}, which is not a training day",
                    self.mode
                )));
            }
        }
        Ok(())
    }

    /// Fails if any day was normalised with statistics from one of the test
    /// days in this set.
    pub fn check_no_test_stats(&self) -> Result<()> {
        for (day, s) in &self.stats {
            if let Some(bad) = s.provenance.day_ids.iter().find(|d| self.test.iter().any(|m| &m.day_id == *d)) {
                return Err(CliError::Leak(format!(
                    "{} features of {day} use statistics fitted on test day {bad}",
                    self.mode
                )));
            }
        }
        Ok(())
    }
}

/// Stationary features use statistics pooled over all training days. Raw
/// features use the previous day's statistics, so the first day only
/// provides statistics, and test days use the last training day's.
pub fn extract_features(days: &Days, mode: FeatureMode) -> Result<FeatureSet> {
    let mut stats = BTreeMap::new();
    let (train, test) = match mode {
        FeatureMode::Stationary => {
            let parts = days
                .train()
                .iter()
                .map(|s| unnormalized_features(s, FeatureMode::Stationary))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let pooled = fit_norm_stats(&parts.iter().collect::<Vec<_>>())?;
            let mut run = |set: &[SnapshotSeries]| -> Result<Vec<FeatureMatrix>> {
                set.iter()
                    .map(|s| {
                        stats.insert(s.day_id.clone(), pooled.clone());
                        Ok(stationary_features(s, Normalization::Use(&pooled))?.0)
                    })
                    .collect()
            };
            (run(days.train())?, run(days.test())?)
        }
        FeatureMode::Raw => {
            if days.n_train < 2 {
                return Err(CliError::Config(
                    "raw features need at least 2 training days: the first only provides statistics".into(),
                ));
            }
            let day_stats = days.train().iter().map(fit_raw_stats).collect::<std::result::Result<Vec<_>, _>>()?;
            let mut train = Vec::new();
            for (i, s) in days.train().iter().enumerate().skip(1) {
                stats.insert(s.day_id.clone(), day_stats[i - 1].clone());
                train.push(raw_features(s, Some(&day_stats[i - 1]))?);
            }
            let last = day_stats.last().expect("at least two training days");
            let mut test = Vec::new();
            for s in days.test() {
                stats.insert(s.day_id.clone(), last.clone());
                test.push(raw_features(s, Some(last))?);
            }
            (train, test)
        }
    };
    let set = FeatureSet {
        mode,
        train,
        test,
        stats,
    };
    set.check_provenance(&days.train_ids())?;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureEntry {
    day_id: String,
    split: Split,
    file: String,
    stats: NormStats,
}

fn stats_tag(s: &NormStats) -> String {
    s.provenance.day_ids.join("+")
}

pub fn write_features(layout: &Layout, set: &FeatureSet) -> Result<()> {
    let dir = layout.features_dir(set.mode);
    create_dir(&dir)?;
    let mut entries = Vec::new();
    for (split, days) in [(Split::Train, &set.train), (Split::Test, &set.test)] {
        for m in days.iter() {
            let file = format!("{}.csv", m.day_id);
            let path = dir.join(&file);
            let stats = set.stats[&m.day_id].clone();
            let mut w = BufWriter::new(File::create(&path).map_err(CliError::io(&path))?);
            m.write_to(&mut w, &stats_tag(&stats)).map_err(CliError::io(&path))?;
            w.flush().map_err(CliError::io(&path))?;
            entries.push(FeatureEntry {
                day_id: m.day_id.clone(),
                split,
                file,
                stats,
            });
        }
    }
    write_json(&layout.stats_manifest(set.mode), &entries)
}

pub fn read_features(layout: &Layout, mode: FeatureMode) -> Result<FeatureSet> {
    let entries: Vec<FeatureEntry> = read_json(&layout.stats_manifest(mode), "feature manifest", "extract")?;
    let mut set = FeatureSet {
        mode,
        train: Vec::new(),
        test: Vec::new(),
        stats: BTreeMap::new(),
    };
    for e in entries {
        let path = layout.features_dir(mode).join(&e.file);
        let (m, tag) = FeatureMatrix::read_from(open(&path, "feature file", "extract")?).map_err(|err| CliError::parse(&path, err))?;
        if tag != stats_tag(&e.stats) || m.mode != mode {
            return Err(CliError::parse(&path, "header does not match the feature manifest"));
        }
        set.stats.insert(e.day_id, e.stats);
        match e.split {
            Split::Train => set.train.push(m),
            Split::Test => set.test.push(m),
        }
    }
    set.check_no_test_stats()?;
    Ok(set)
}

/// Threshold of one horizon and the label mix it produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonAlpha {
    pub horizon: usize,
    pub alpha: f64,
    /// Set when `alpha` was calibrated on the training days.
    pub calibration_target: Option<f64>,
    pub train_distribution: ClassDistribution,
    pub test_distribution: ClassDistribution,
}

fn distribution(labels: &[LabelSeries]) -> Result<ClassDistribution> {
    let counts = count_classes(labels.iter().flat_map(|l| l.labels().iter().copied()));
    Ok(ClassDistribution::from_counts(counts)?)
}

/// Labels every day for every configured horizon.
pub fn label_days(cfg: &ExperimentConfig, days: &Days) -> Result<Vec<(HorizonAlpha, Vec<LabelSeries>)>> {
    let mids: Vec<Vec<f64>> = days.series.iter().map(|s| s.mid_prices()).collect();
    let mut out = Vec::new();
    for (i, &k) in cfg.labels.horizons.iter().enumerate() {
        let alpha = match cfg.labels.calibrate_target {
            Some(target) => {
                let train: Vec<&[f64]> = mids[..days.n_train].iter().map(Vec::as_slice).collect();
                calibrate_alpha_pooled(&train, k, target)?.alpha
            }
            None => cfg.labels.alphas[i],
        };
        let labels = mids
            .iter()
            .map(|p| label_series(p, k, alpha))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let record = HorizonAlpha {
            horizon: k,
            alpha,
            calibration_target: cfg.labels.calibrate_target,
            train_distribution: distribution(&labels[..days.n_train])?,
            test_distribution: distribution(&labels[days.n_train..])?,
        };
        out.push((record, labels));
    }
    Ok(out)
}

pub fn write_labels(layout: &Layout, days: &Days, labeled: &[(HorizonAlpha, Vec<LabelSeries>)]) -> Result<()> {
    for (h, labels) in labeled {
        let dir = layout.labels_dir(h.horizon);
        create_dir(&dir)?;
        for (s, l) in days.series.iter().zip(labels) {
            let path = dir.join(format!("{}.csv", s.day_id));
            let mut w = BufWriter::new(File::create(&path).map_err(CliError::io(&path))?);
            l.write_to(&mut w).map_err(CliError::io(&path))?;
            w.flush().map_err(CliError::io(&path))?;
        }
    }
    let alphas: Vec<&HorizonAlpha> = labeled.iter().map(|(h, _)| h).collect();
    write_json(&layout.alphas_file(), &alphas)
}

pub fn read_alphas(layout: &Layout) -> Result<Vec<HorizonAlpha>> {
    read_json(&layout.alphas_file(), "label thresholds", "label")
}

pub fn read_label(layout: &Layout, horizon: usize, day_id: &str) -> Result<LabelSeries> {
    let path = layout.labels_dir(horizon).join(format!("{day_id}.csv"));
    LabelSeries::read_from(open(&path, "label file", "label")?).map_err(|e| CliError::parse(&path, e))
}

/// Pairs each feature day with its labels.
pub fn align(features: &[FeatureMatrix], labels: &BTreeMap<String, LabelSeries>) -> Result<Vec<LabeledSequence>> {
    features
        .iter()
        .map(|m| {
            let l = labels
                .get(&m.day_id)
                .ok_or_else(|| CliError::Config(format!("no labels for day {}", m.day_id)))?;
            Ok(LabeledSequence::align(m, l)?)
        })
        .collect()
}

/// Everything one cell produces.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub summary: CellSummary,
    pub records: Vec<EpochRecord>,
    pub checkpoint: Checkpoint,
    pub loss_profile: Option<LossProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: CellKey,
    pub id: String,
    pub config_hash: String,
    pub alpha: f64,
    pub epochs: usize,
    pub burn_in: usize,
    pub class_weights: ClassWeights,
    pub train_steps: u64,
    pub test_steps: u64,
    /// Means over the last epochs.
    pub train: MetricSummary,
    pub test: MetricSummary,
    pub final_test: EpochRecord,
}

/// Trains one cell and summarises its epochs.
pub fn train_cell(
    cfg: &ExperimentConfig,
    cell: CellKey,
    alpha: f64,
    train_seqs: &[LabeledSequence],
    test_seqs: &[LabeledSequence],
) -> Result<CellRun> {
    let width = train_seqs
        .first()
        .map(|s| s.width)
        .ok_or_else(|| CliError::Config(format!("{cell}: no training days")))?;
    let spec = cfg.model_spec(cell, width);
    let tcfg = cfg.train_config();
    let wrap = |source| CliError::Cell {
        cell: cell.to_string(),
        source,
    };
    let outcome = train(&spec, train_seqs, test_seqs, &tcfg).map_err(wrap)?;
    let hash = cfg.cell_hash(cell, alpha);
    let extra = serde_json::json!({ "cell": cell, "config_hash": hash, "alpha": alpha });
    let dtype = cfg.report.checkpoint_dtype;
    let (checkpoint, loss_profile) = match &outcome.trained {
        Trained::Neural { model, optimizer } => {
            let profile = if cell.architecture.is_temporal() {
                let mut m = model.clone();
                Some(loss_profile(&mut m, test_seqs, &outcome.class_weights, tcfg.batch_size).map_err(wrap)?)
            } else {
                None
            };
            (Checkpoint::from_model(model, Some(optimizer), extra, dtype), profile)
        }
        Trained::Svm(svm) => (Checkpoint::from_svm(&spec, svm, extra, dtype), None),
    };
    let n = cfg.report.last_epochs;
    let last = |split| {
        mean_of_last(&outcome.records, split, n).ok_or_else(|| CliError::Config(format!("{cell}: no {split:?} epochs recorded")))
    };
    let final_test = outcome
        .records
        .iter()
        .rev()
        .find(|r| r.split == Split::Test)
        .cloned()
        .ok_or_else(|| CliError::Config(format!("{cell}: no test epochs recorded")))?;
    let steps = |split| outcome.records.iter().rev().find(|r| r.split == split).map_or(0, |r| r.steps);
    let summary = CellSummary {
        cell,
        id: cell.to_string(),
        config_hash: hash,
        alpha,
        epochs: tcfg.epochs,
        burn_in: tcfg.burn_in_for(cell.architecture),
        class_weights: outcome.class_weights,
        train_steps: steps(Split::Train),
        test_steps: steps(Split::Test),
        train: last(Split::Train)?,
        test: last(Split::Test)?,
        final_test,
    };
    Ok(CellRun {
        summary,
        records: outcome.records,
        checkpoint,
        loss_profile,
    })
}

pub fn write_cell(layout: &Layout, run: &CellRun) -> Result<()> {
    let dir = layout.cell_dir(run.summary.cell);
    create_dir(&dir)?;
    write_file(&dir.join("checkpoint.bin"), &run.checkpoint.to_bytes())?;
    write_json(&dir.join("cell.json"), &run.summary)?;
    let mut lines = String::new();
    for r in &run.records {
        lines.push_str(&serde_json::to_string(r).expect("record serialises"));
        lines.push('\n');
    }
    write_file(&dir.join("epochs.jsonl"), lines.as_bytes())?;
    if let Some(p) = &run.loss_profile {
        write_json(&dir.join("loss_profile.json"), p)?;
    }
    Ok(())
}

/// Cell outputs read back for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredCell {
    pub summary: CellSummary,
    pub records: Vec<EpochRecord>,
    pub loss_profile: Option<LossProfile>,
}

pub fn read_cell(layout: &Layout, cell: CellKey) -> Result<StoredCell> {
    let dir = layout.cell_dir(cell);
    let summary: CellSummary = read_json(&dir.join("cell.json"), "cell summary", "train")?;
    let path = dir.join("epochs.jsonl");
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let records = text
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::parse(&path, e)))
        .collect::<Result<Vec<EpochRecord>>>()?;
    let profile_path = dir.join("loss_profile.json");
    let loss_profile = if cell.architecture.is_temporal() {
        Some(read_json(&profile_path, "loss profile", "train")?)
    } else {
        None
    };
    Ok(StoredCell {
        summary,
        records,
        loss_profile,
    })
}
