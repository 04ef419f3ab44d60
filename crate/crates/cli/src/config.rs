//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};

use lobtrend::datagen::{random_schedule, SynthConfig, VolumeLaw};
use lobtrend::FeatureMode;
use lobtrend_nn::checkpoint::Dtype;
use lobtrend_nn::layers::LstmVariant;
use lobtrend_nn::model::{Architecture, ModelSpec, DEFAULT_DROPOUT, DEFAULT_FLAT_WINDOW, DEFAULT_TEMPORAL_WINDOW};
use lobtrend_nn::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const DEFAULT_HORIZONS: [usize; 4] = [10, 50, 100, 200];
pub const DEFAULT_ALPHAS: [f64; 4] = [2e-5, 9e-5, 3e-4, 3.5e-4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds model initialisation and shuffling, and the synthetic data
    /// unless `data.seed` is set.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strict: bool,
    pub data: DataConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub labels: LabelsConfig,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synth(SynthData),
    /// One snapshot file per day, in trading order.
    Files {
        paths: Vec<PathBuf>,
        #[serde(default = "default_stock")]
        stock_id: String,
        #[serde(default)]
        lenient: bool,
    },
}

fn default_stock() -> String {
    "SYNTH".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthData {
    pub days: usize,
    pub events_per_day: usize,
    pub base_price: f64,
    pub tick_size: f64,
    /// Drift per event of each regime is drawn from this list.
    pub drifts: Vec<f64>,
    pub noise_std: f64,
    pub min_regime: usize,
    pub max_regime: usize,
    pub spread_ticks: u32,
    pub persistent_volume: Option<f64>,
    pub volume_law: VolumeLaw,
    pub stock_id: String,
    pub seed: Option<u64>,
}

impl Default for SynthData {
    fn default() -> Self {
        SynthData {
            days: 10,
            events_per_day: 5000,
            base_price: 100.0,
            tick_size: 0.01,
            drifts: vec![-0.01, 0.0, 0.01],
            noise_std: 0.005,
            min_regime: 400,
            max_regime: 1200,
            spread_ticks: 2,
            persistent_volume: None,
            volume_law: VolumeLaw::default(),
            stock_id: default_stock(),
            seed: None,
        }
    }
}

impl SynthData {
    /// Per-day generator configs. Day `d` is seeded from `seed` and `d`.
    pub fn day_configs(&self, seed: u64) -> Vec<SynthConfig> {
        let seed = self.seed.unwrap_or(seed);
        (0..self.days)
            .map(|d| {
                let day_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(d as u64 + 1);
                SynthConfig {
                    n_events: self.events_per_day,
                    tick_size: self.tick_size,
                    base_price: self.base_price,
                    regime_schedule: random_schedule(
                        self.events_per_day,
                        self.min_regime,
                        self.max_regime,
                        &self.drifts,
                        self.noise_std,
                        day_seed ^ 0x5bd1_e995,
                    ),
                    volume_law: self.volume_law.clone(),
                    seed: day_seed,
                    spread_ticks: self.spread_ticks,
                    persistent_volume: self.persistent_volume,
                    stock_id: self.stock_id.clone(),
                    day_id: format!("day{d:02}"),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub modes: Vec<FeatureMode>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            modes: vec![FeatureMode::Raw, FeatureMode::Stationary],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelsConfig {
    pub horizons: Vec<usize>,
    /// One threshold per horizon; ignored when `calibrate_target` is set.
    pub alphas: Vec<f64>,
    /// Stationary share to calibrate each horizon's threshold to, on the
    /// training days.
    pub calibrate_target: Option<f64>,
}

impl Default for LabelsConfig {
    fn default() -> Self {
        LabelsConfig {
            horizons: DEFAULT_HORIZONS.to_vec(),
            alphas: DEFAULT_ALPHAS.to_vec(),
            calibrate_target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub stationary: Vec<Architecture>,
    pub raw: Vec<Architecture>,
    pub temporal_window: usize,
    pub flat_window: usize,
    pub dropout: f64,
    pub lstm_variant: LstmVariant,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            stationary: Architecture::ALL.to_vec(),
            raw: vec![Architecture::LinearSvm, Architecture::Mlp, Architecture::Cnn, Architecture::Lstm],
            temporal_window: DEFAULT_TEMPORAL_WINDOW,
            flat_window: DEFAULT_FLAT_WINDOW,
            dropout: DEFAULT_DROPOUT,
            lstm_variant: LstmVariant::default(),
        }
    }
}

impl ModelsConfig {
    pub fn for_mode(&self, mode: FeatureMode) -> &[Architecture] {
        match mode {
            FeatureMode::Stationary => &self.stationary,
            FeatureMode::Raw => &self.raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Leading days used for training; the rest are test days.
    pub train_days: Option<usize>,
    /// Used when `train_days` is unset.
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_days: None,
            train_fraction: 0.7,
        }
    }
}

impl SplitConfig {
    /// Number of training days out of `days`.
    pub fn train_count(&self, days: usize) -> Result<usize> {
        let n = match self.train_days {
            Some(n) => n,
            None => (self.train_fraction * days as f64).round() as usize,
        };
        if n == 0 || n >= days {
            return Err(CliError::Config(format!(
                "split leaves {n} training and {} test days; both must be non-empty",
                days.saturating_sub(n)
            )));
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Epochs averaged into each report cell.
    pub last_epochs: usize,
    pub checkpoint_dtype: Dtype,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            last_epochs: 20,
            checkpoint_dtype: Dtype::F32,
        }
    }
}

/// One (feature mode, model, horizon) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub horizon: usize,
    pub mode: FeatureMode,
    pub architecture: Architecture,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-k{}", self.mode, self.architecture, self.horizon)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Parses and validates TOML text.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        match &self.data {
            DataConfig::Synth(s) => {
                if s.days < 2 {
                    return bad(format!("synth needs at least 2 days, got {}", s.days));
                }
                if s.drifts.is_empty() || s.min_regime == 0 || s.max_regime < s.min_regime {
                    return bad("synth regimes need drifts and 1 <= min_regime <= max_regime".into());
                }
                self.split.train_count(s.days)?;
                for d in s.day_configs(self.seed) {
                    d.validate()?;
                }
            }
            DataConfig::Files { paths, .. } => {
                self.split.train_count(paths.len())?;
            }
        }
        let l = &self.labels;
        if l.horizons.is_empty() || l.horizons.contains(&0) {
            return bad("horizons must be a non-empty list of positive integers".into());
        }
        if l.calibrate_target.is_none() && l.alphas.len() != l.horizons.len() {
            return bad(format!(
                "{} horizons but {} alphas; the lists must have equal length",
                l.horizons.len(),
                l.alphas.len()
            ));
        }
        if let Some(t) = l.calibrate_target {
            if !(t > 0.0 && t <= 1.0) {
                return bad(format!("calibrate_target {t} outside (0, 1]"));
            }
        }
        if l.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("alphas must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.split.train_fraction) {
            return bad(format!("train_fraction {} outside [0, 1)", self.split.train_fraction));
        }
        if self.features.modes.is_empty() {
            return bad("no feature modes selected".into());
        }
        if self.report.last_epochs == 0 {
            return bad("report.last_epochs must be positive".into());
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        for cell in self.cells() {
            let spec = self.model_spec(cell, cell.mode.width());
            spec.validate().map_err(|e| CliError::Config(format!("{cell}: {e}")))?;
            let burn_in = self.train.burn_in_for(cell.architecture);
            if cell.architecture.is_temporal() && burn_in >= spec.window {
                return bad(format!("{cell}: burn-in {burn_in} must be below the window {}", spec.window));
            }
        }
        Ok(())
    }

    /// Report cells in table order: horizon, then raw before stationary,
    /// then model order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &horizon in &self.labels.horizons {
            for mode in [FeatureMode::Raw, FeatureMode::Stationary] {
                if !self.features.modes.contains(&mode) {
                    continue;
                }
                for arch in Architecture::ALL {
                    if self.models.for_mode(mode).contains(&arch) {
                        out.push(CellKey {
                            horizon,
                            mode,
                            architecture: arch,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn model_spec(&self, cell: CellKey, features: usize) -> ModelSpec {
        let window = if cell.architecture.is_temporal() {
            self.models.temporal_window
        } else {
            self.models.flat_window
        };
        let mut spec = ModelSpec::new(cell.architecture, features, cell.horizon).with_window(window);
        spec.dropout = self.models.dropout;
        spec.lstm_variant = self.models.lstm_variant;
        spec
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// SHA-256 over everything that determines a cell's result.
    pub fn cell_hash(&self, cell: CellKey, alpha: f64) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            data: &'a DataConfig,
            split: &'a SplitConfig,
            cell: CellKey,
            alpha: f64,
            spec: ModelSpec,
            train: TrainConfig,
            checkpoint_dtype: Dtype,
        }
        let h = Hashed {
            data: &self.data,
            split: &self.split,
            cell,
            alpha,
            spec: self.model_spec(cell, cell.mode.width()),
            train: self.train_config(),
            checkpoint_dtype: self.report.checkpoint_dtype,
        };
        let bytes = serde_json::to_vec(&h).expect("hash input serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}
