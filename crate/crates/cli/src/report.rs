//! Results table and plot-ready CSV files.

use std::fmt::Write as _;

use lobtrend::FeatureMode;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::pipeline::{write_file, write_json, Layout, StoredCell};

fn mode_label(m: FeatureMode) -> &'static str {
    match m {
        FeatureMode::Raw => "raw values",
        FeatureMode::Stationary => "stationary",
    }
}

/// Mean of the last epochs on the test days, grouped by horizon and then by
/// feature type, one model per row.
pub fn render_table(cfg: &ExperimentConfig, cells: &[StoredCell]) -> String {
    let mut out = String::new();
    let n = cfg.report.last_epochs;
    let _ = writeln!(out, "Mid-price trend classification: test-day means over the last {n} epochs");
    let mut horizon = None;
    for c in cells {
        let s = &c.summary;
        if horizon != Some(s.cell.horizon) {
            horizon = Some(s.cell.horizon);
            let _ = writeln!(out);
            let _ = writeln!(out, "Prediction horizon k={}  alpha={:e}", s.cell.horizon, s.alpha);
            let _ = writeln!(
                out,
                "{:<12} {:<10} {:>7} {:>9} {:>7} {:>9} {:>7}  config",
                "features", "model", "recall", "precision", "f1", "f1(means)", "kappa"
            );
        }
        let t = &s.test;
        let _ = writeln!(
            out,
            "{:<12} {:<10} {:>7.4} {:>9.4} {:>7.4} {:>9.4} {:>7.4}  {}",
            mode_label(s.cell.mode),
            s.cell.architecture.name(),
            t.recall,
            t.precision,
            t.f1,
            t.f1_of_means,
            t.kappa,
            &s.config_hash[..12]
        );
    }
    out
}

#[derive(Serialize)]
struct MetricLine<'a> {
    cell: &'a str,
    config_hash: &'a str,
    #[serde(flatten)]
    record: &'a lobtrend_nn::train::EpochRecord,
}

/// Writes `report.txt`, `report.json`, `metrics.jsonl`, `epochs.csv` and
/// `loss_per_step.csv`. Returns the table text.
pub fn write_report(cfg: &ExperimentConfig, layout: &Layout, cells: &[StoredCell]) -> Result<String> {
    let dir = layout.report_dir();
    let table = render_table(cfg, cells);
    write_file(&dir.join("report.txt"), table.as_bytes())?;
    let summaries: Vec<_> = cells.iter().map(|c| &c.summary).collect();
    write_json(&dir.join("report.json"), &summaries)?;

    let mut jsonl = String::new();
    let mut epochs = String::from("cell,epoch,split,kappa,f1,f1_of_means,recall,precision,loss\n");
    let mut steps = String::from("cell,step,mean_loss,count\n");
    for c in cells {
        let id = c.summary.id.as_str();
        for r in &c.records {
            let line = MetricLine {
                cell: id,
                config_hash: &c.summary.config_hash,
                record: r,
            };
            jsonl.push_str(&serde_json::to_string(&line).expect("record serialises"));
            jsonl.push('\n');
            let _ = writeln!(
                epochs,
                "{id},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.split.as_str(),
                r.kappa,
                r.f1,
                r.f1_of_means,
                r.recall,
                r.precision,
                r.loss
            );
        }
        if let Some(p) = &c.loss_profile {
            for (t, (m, n)) in p.mean.iter().zip(&p.count).enumerate() {
                let _ = writeln!(steps, "{id},{t},{m},{n}");
            }
        }
    }
    write_file(&dir.join("metrics.jsonl"), jsonl.as_bytes())?;
    write_file(&dir.join("epochs.csv"), epochs.as_bytes())?;
    write_file(&dir.join("loss_per_step.csv"), steps.as_bytes())?;
    Ok(table)
}
