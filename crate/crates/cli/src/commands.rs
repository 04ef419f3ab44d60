//! One function per subcommand. Each reads its inputs from the output
//! directory and overwrites its own artifacts, so reruns are idempotent.

use std::collections::BTreeMap;

use lobtrend::{FeatureMode, LabelSeries};
use lobtrend_nn::checkpoint::Checkpoint;
use lobtrend_nn::train::{evaluate, evaluate_svm, EpochRecord, Split};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CellKey, DataConfig, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::pipeline::{
    align, extract_features, label_days, load_days, read_alphas, read_cell, read_features, read_label, synthesize,
    train_cell, write_cell, write_days, write_features, write_json, write_labels, FeatureSet, HorizonAlpha, Layout,
    StoredCell,
};
use crate::report::write_report;

pub fn cmd_synth(cfg: &ExperimentConfig, layout: &Layout) -> Result<usize> {
    let days = synthesize(cfg)?;
    write_days(layout, &days)?;
    log::info!("wrote {} synthetic days to {}", days.series.len(), layout.data_dir().display());
    Ok(days.series.len())
}

pub fn cmd_extract(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<FeatureSet>> {
    let days = load_days(cfg, layout)?;
    let mut out = Vec::new();
    for &mode in &cfg.features.modes {
        let set = extract_features(&days, mode)?;
        write_features(layout, &set)?;
        log::info!("{mode}: {} training and {} test days", set.train.len(), set.test.len());
        out.push(set);
    }
    Ok(out)
}

pub fn cmd_label(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<HorizonAlpha>> {
    let days = load_days(cfg, layout)?;
    let labeled = label_days(cfg, &days)?;
    write_labels(layout, &days, &labeled)?;
    for (h, _) in &labeled {
        let d = &h.train_distribution;
        log::info!(
            "k={} alpha={:e}: train down/stationary/up {:.3}/{:.3}/{:.3}",
            h.horizon,
            h.alpha,
            d.down,
            d.stationary,
            d.up
        );
    }
    Ok(labeled.into_iter().map(|(h, _)| h).collect())
}

fn alpha_for(alphas: &[HorizonAlpha], horizon: usize) -> Result<f64> {
    alphas
        .iter()
        .find(|h| h.horizon == horizon)
        .map(|h| h.alpha)
        .ok_or_else(|| CliError::MissingInput {
            what: "labels for the horizon",
            path: format!("k{horizon}").into(),
            hint: "label",
        })
}

type LabelMap = BTreeMap<String, LabelSeries>;

/// Features and labels read back from disk, keyed for cell lookup.
struct Inputs {
    features: BTreeMap<FeatureMode, FeatureSet>,
    labels: BTreeMap<usize, LabelMap>,
    alphas: Vec<HorizonAlpha>,
}

fn read_inputs(cfg: &ExperimentConfig, layout: &Layout) -> Result<Inputs> {
    let alphas = read_alphas(layout)?;
    let mut features = BTreeMap::new();
    for &mode in &cfg.features.modes {
        features.insert(mode, read_features(layout, mode)?);
    }
    let mut day_ids: Vec<String> = Vec::new();
    for set in features.values() {
        for m in set.train.iter().chain(&set.test) {
            if !day_ids.contains(&m.day_id) {
                day_ids.push(m.day_id.clone());
            }
        }
    }
    let mut labels = BTreeMap::new();
    for &k in &cfg.labels.horizons {
        alpha_for(&alphas, k)?;
        let mut map = LabelMap::new();
        for d in &day_ids {
            map.insert(d.clone(), read_label(layout, k, d)?);
        }
        labels.insert(k, map);
    }
    Ok(Inputs {
        features,
        labels,
        alphas,
    })
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("LOBTREND_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("LOBTREND_THREADS={v:?} is not a thread count")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

/// Trains every configured cell. Cells run in parallel; each one is
/// single-threaded, so results do not depend on the thread count.
pub fn cmd_train(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<StoredCell>> {
    let inputs = read_inputs(cfg, layout)?;
    let cells = cfg.cells();
    let pool = thread_pool()?;
    let runs: Vec<Result<StoredCell>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&cell| {
                let set = &inputs.features[&cell.mode];
                let labels = &inputs.labels[&cell.horizon];
                let train = align(&set.train, labels)?;
                let test = align(&set.test, labels)?;
                let alpha = alpha_for(&inputs.alphas, cell.horizon)?;
                let run = train_cell(cfg, cell, alpha, &train, &test)?;
                write_cell(layout, &run)?;
                log::info!(
                    "{cell}: test kappa {:.4} f1 {:.4} (last {} epochs)",
                    run.summary.test.kappa,
                    run.summary.test.f1,
                    run.summary.test.epochs
                );
                Ok(StoredCell {
                    summary: run.summary,
                    records: run.records,
                    loss_profile: run.loss_profile,
                })
            })
            .collect()
    });
    runs.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub cell: CellKey,
    pub config_hash: String,
    pub metrics: EpochRecord,
}

/// Re-evaluates every stored checkpoint on the test days.
pub fn cmd_eval(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<EvalRecord>> {
    let inputs = read_inputs(cfg, layout)?;
    let tcfg = cfg.train_config();
    let mut out = Vec::new();
    for cell in cfg.cells() {
        let dir = layout.cell_dir(cell);
        let path = dir.join("checkpoint.bin");
        let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingInput {
                what: "checkpoint",
                path: path.clone(),
                hint: "train",
            },
            _ => CliError::io(&path)(e),
        })?;
        let ck = Checkpoint::from_bytes(&bytes).map_err(|e| CliError::parse(&path, e))?;
        let stored = read_cell(layout, cell)?;
        let test = align(&inputs.features[&cell.mode].test, &inputs.labels[&cell.horizon])?;
        let wrap = |source| CliError::Cell {
            cell: cell.to_string(),
            source,
        };
        let (cm, loss) = if cell.architecture.is_neural() {
            let mut model = ck.restore_model().map_err(wrap)?;
            let burn_in = tcfg.burn_in_for(cell.architecture);
            evaluate(&mut model, &test, &stored.summary.class_weights, burn_in, tcfg.batch_size).map_err(wrap)?
        } else {
            let svm = ck.restore_svm().map_err(wrap)?;
            evaluate_svm(&svm, &ck.metadata.spec, &test, tcfg.flat_stride).map_err(wrap)?
        };
        let record = EvalRecord {
            cell,
            config_hash: stored.summary.config_hash.clone(),
            metrics: EpochRecord::from_confusion(stored.summary.epochs, Split::Test, &cm, loss),
        };
        write_json(&dir.join("eval.json"), &record)?;
        out.push(record);
    }
    Ok(out)
}

pub fn cmd_report(cfg: &ExperimentConfig, layout: &Layout) -> Result<String> {
    let cells = cfg
        .cells()
        .into_iter()
        .map(|c| read_cell(layout, c))
        .collect::<Result<Vec<_>>>()?;
    write_report(cfg, layout, &cells)
}

/// synth (for synthetic data), extract, label, train, report.
pub fn cmd_run(cfg: &ExperimentConfig, layout: &Layout) -> Result<String> {
    if matches!(cfg.data, DataConfig::Synth(_)) {
        cmd_synth(cfg, layout)?;
    }
    cmd_extract(cfg, layout)?;
    cmd_label(cfg, layout)?;
    cmd_train(cfg, layout)?;
    cmd_report(cfg, layout)
}
