//! Bitcoin realized-volatility forecasting from price bars and tweet activity.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: reverse-mode differentiation over dense arrays
//! - [`nn`]: layers, loss, AdamW, checkpoints
//! - [`models`]: TCN, D-TCN, LSTM and GRU forecasters
//! - [`econ`]: AR-RV and GARCH(1,1) baselines
//! - [`ingest`]: tweet pruning and VADER sentiment
//! - [`features`]: 15-minute aggregation, scaling and day windows
//! - [`eval`]: metrics, significance tests, bootstrap bands, reports
//! - [`synth`]: a synthetic market and tweet generator
//! - [`experiment`]: the train / ablate / search / report workflows

pub mod tensor;
pub mod nn;
pub mod models;
pub mod ingest;
pub mod features;
pub mod econ;
pub mod eval;
pub mod synth;
pub mod experiment;

/// Fifteen-minute bins in one UTC day.
pub const BINS_PER_DAY: usize = 96;
