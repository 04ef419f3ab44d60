//! Seeded synthetic book series with piecewise drift regimes.
//!
//! The mid-price is a random walk on the tick grid. Each regime contributes a
//! per-event drift (in price units) plus Gaussian noise; levels are laid out
//! symmetrically around the mid at one-tick spacing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::{BookSnapshot, Level, SnapshotSeries, DEPTH};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
}

fn config_err(field: &'static str, reason: impl Into<String>) -> SynthError {
    SynthError::Config {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    /// Number of events in this regime.
    pub length: usize,
    /// Expected mid-price change per event, in price units.
    pub drift: f64,
    /// Standard deviation of the per-event latent price shock.
    pub noise_std: f64,
}

/// Gamma-distributed level volumes, parameterised by mean and coefficient of variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeLaw {
    pub mean: f64,
    pub dispersion: f64,
}

impl Default for VolumeLaw {
    fn default() -> Self {
        VolumeLaw {
            mean: 500.0,
            dispersion: 0.5,
        }
    }
}

fn default_spread_ticks() -> u32 {
    2
}

fn default_stock() -> String {
    "SYNTH".to_string()
}

fn default_day() -> String {
    "day0".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_events: usize,
    pub tick_size: f64,
    pub base_price: f64,
    pub regime_schedule: Vec<Regime>,
    #[serde(default)]
    pub volume_law: VolumeLaw,
    pub seed: u64,
    /// Quoted spread in ticks.
    #[serde(default = "default_spread_ticks")]
    pub spread_ticks: u32,
    /// Autoregressive carry for level volumes, in `[0, 1)`. `None` draws
    /// volumes independently per level and event.
    #[serde(default)]
    pub persistent_volume: Option<f64>,
    #[serde(default = "default_stock")]
    pub stock_id: String,
    #[serde(default = "default_day")]
    pub day_id: String,
}

impl SynthConfig {
    /// Single-regime config, handy in tests.
    pub fn single_regime(n_events: usize, drift: f64, noise_std: f64, seed: u64) -> Self {
        SynthConfig {
            n_events,
            tick_size: 0.01,
            base_price: 100.0,
            regime_schedule: vec![Regime {
                length: n_events,
                drift,
                noise_std,
            }],
            volume_law: VolumeLaw::default(),
            seed,
            spread_ticks: default_spread_ticks(),
            persistent_volume: None,
            stock_id: default_stock(),
            day_id: default_day(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_events == 0 {
            return Err(config_err("n_events", "must be positive"));
        }
        if !(self.tick_size.is_finite() && self.tick_size > 0.0) {
            return Err(config_err("tick_size", "must be a positive number"));
        }
        if !(self.base_price.is_finite() && self.base_price > 10.0 * self.tick_size) {
            return Err(config_err("base_price", "must exceed 10 x tick_size"));
        }
        if self.spread_ticks == 0 {
            return Err(config_err("spread_ticks", "must be at least 1"));
        }
        let total: usize = self.regime_schedule.iter().map(|r| r.length).sum();
        if total != self.n_events {
            return Err(config_err(
                "regime_schedule",
                format!("lengths sum to {total}, expected n_events = {}", self.n_events),
            ));
        }
        for r in &self.regime_schedule {
            if !r.drift.is_finite() {
                return Err(config_err("regime_schedule", "drift must be finite"));
            }
            if !(r.noise_std.is_finite() && r.noise_std >= 0.0) {
                return Err(config_err("regime_schedule", "noise_std must be >= 0"));
            }
        }
        let vl = &self.volume_law;
        if !(vl.mean.is_finite() && vl.mean > 0.0) {
            return Err(config_err("volume_law", "mean must be positive"));
        }
        if !(vl.dispersion.is_finite() && vl.dispersion > 0.0) {
            return Err(config_err("volume_law", "dispersion must be positive"));
        }
        if let Some(rho) = self.persistent_volume {
            if !(0.0..1.0).contains(&rho) {
                return Err(config_err("persistent_volume", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

struct VolumeSampler {
    gamma: Gamma<f64>,
    carry: Option<f64>,
    state: [[f64; DEPTH]; 2],
    primed: bool,
}

impl VolumeSampler {
    fn new(law: &VolumeLaw, carry: Option<f64>) -> Self {
        let shape = 1.0 / (law.dispersion * law.dispersion);
        let scale = law.mean / shape;
        VolumeSampler {
            gamma: Gamma::new(shape, scale).expect("validated volume law"),
            carry,
            state: [[0.0; DEPTH]; 2],
            primed: false,
        }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> [[f64; DEPTH]; 2] {
        let mut out = [[0.0; DEPTH]; 2];
        for side in 0..2 {
            for k in 0..DEPTH {
                let fresh = self.gamma.sample(rng);
                let v = match self.carry {
                    Some(rho) if self.primed => rho * self.state[side][k] + (1.0 - rho) * fresh,
                    _ => fresh,
                };
                self.state[side][k] = v;
                // whole shares, never below one
                out[side][k] = v.round().max(1.0);
            }
        }
        self.primed = true;
        out
    }
}

/// Generates one series. Identical configs give bit-identical output.
pub fn generate(cfg: &SynthConfig) -> Result<SnapshotSeries, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tick = cfg.tick_size;
    let half_spread = cfg.spread_ticks as f64 / 2.0;
    // keep the deepest bid at least one tick above zero
    let floor_ticks = half_spread + DEPTH as f64;

    let mut volumes = VolumeSampler::new(&cfg.volume_law, cfg.persistent_volume);
    let mut latent = cfg.base_price / tick;
    let mut snapshots = Vec::with_capacity(cfg.n_events);

    let mut event = 0usize;
    for regime in &cfg.regime_schedule {
        let drift = regime.drift / tick;
        let noise = regime.noise_std / tick;
        for _ in 0..regime.length {
            if event > 0 {
                let shock: f64 = if noise > 0.0 {
                    noise * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                latent = (latent + drift + shock).max(floor_ticks);
            }
            let mid_ticks = snap_to_grid(latent, half_spread);
            let vols = volumes.draw(&mut rng);
            let mut asks = [Level::new(0.0, 0.0); DEPTH];
            let mut bids = [Level::new(0.0, 0.0); DEPTH];
            for k in 0..DEPTH {
                let offset = half_spread + k as f64;
                asks[k] = Level::new((mid_ticks + offset) * tick, vols[0][k]);
                bids[k] = Level::new((mid_ticks - offset) * tick, vols[1][k]);
            }
            snapshots.push(BookSnapshot {
                timestamp: event as u64,
                asks,
                bids,
            });
            event += 1;
        }
    }
    debug_assert!(snapshots.iter().all(|s| s.check().is_ok()));
    Ok(SnapshotSeries::new(cfg.stock_id.clone(), cfg.day_id.clone(), snapshots)
        .expect("generator emits increasing timestamps"))
}

/// Rounds the latent mid (in ticks) so that every quoted level lands on the grid.
/// With an odd spread the mid sits on a half tick.
fn snap_to_grid(latent: f64, half_spread: f64) -> f64 {
    let frac = half_spread.fract();
    (latent - frac).round() + frac
}

/// Generates consecutive days of one stock. Day `d > 0` opens at the previous
/// day's closing mid-price, so the price level wanders across days.
pub fn generate_days(days: &[SynthConfig]) -> Result<Vec<SnapshotSeries>, SynthError> {
    let mut out: Vec<SnapshotSeries> = Vec::with_capacity(days.len());
    for cfg in days {
        let mut cfg = cfg.clone();
        if let Some(prev) = out.last() {
            let close = prev.snapshots().last().expect("non-empty").mid_price();
            cfg.base_price = close;
        }
        out.push(generate(&cfg)?);
    }
    Ok(out)
}

/// Draws a random regime schedule: lengths uniform in `[min_len, max_len]`,
/// drift picked uniformly from `drifts`. The final regime is truncated so the
/// lengths sum to `n_events`.
pub fn random_schedule(
    n_events: usize,
    min_len: usize,
    max_len: usize,
    drifts: &[f64],
    noise_std: f64,
    seed: u64,
) -> Vec<Regime> {
    assert!(min_len >= 1 && max_len >= min_len && !drifts.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut left = n_events;
    while left > 0 {
        let len = rng.random_range(min_len..=max_len).min(left);
        let drift = drifts[rng.random_range(0..drifts.len())];
        out.push(Regime {
            length: len,
            drift,
            noise_std,
        });
        left -= len;
    }
    out
}
