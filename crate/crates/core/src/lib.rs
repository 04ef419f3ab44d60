//! Limit order book data handling for mid-price trend prediction.
//!
//! The crate covers everything up to (but not including) the neural models:
//!
//! - [`book`]: validated 10-level book snapshots and the snapshot file format
//! - [`datagen`]: seeded synthetic snapshot series with drift regimes
//! - [`features`]: stationary (price-ratio / return / total-depth) features and
//!   the z-scored raw baseline
//! - [`labels`]: future-mean trend labels, class weights and threshold calibration
//! - [`metrics`]: confusion matrices, Cohen's kappa and macro scores

pub mod book;
pub mod datagen;
pub mod features;
pub mod labels;
pub mod metrics;

pub use book::{BookSnapshot, Level, SnapshotSeries, DEPTH};
pub use features::{FeatureMatrix, FeatureMode, NormStats};
pub use labels::{ClassWeights, LabelSeries, Trend};
pub use metrics::{ConfusionMatrix, MacroScores};
