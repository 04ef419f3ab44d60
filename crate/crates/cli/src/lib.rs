//! Pipeline orchestration for the `lobtrend` command: synthetic or recorded
//! order book days in, a results table per (feature type, model, horizon)
//! cell out.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::{CellKey, ExperimentConfig};
pub use error::{CliError, Result};
pub use pipeline::Layout;
