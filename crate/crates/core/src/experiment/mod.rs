//! Experiment workflows: seeded repeated training, feature ablation,
//! hyperparameter search and report emission.

pub mod config;
pub mod hpo;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, Forecaster, GarchFrequency, Settings};
pub use hpo::{random_search, SearchResult, SearchSpace, Trial};
pub use report::{write_report, ReportOptions};
pub use run::{ablate, load_days, read_manifests, train, write_manifests, Ablation, Prediction, RunManifest};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    /// Invalid configuration or arguments.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Features(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Econ(#[from] crate::econ::EconError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error("all {0} search trials failed")]
    AllTrialsFailed(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// Whether the error comes from bad input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(self, ExperimentError::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;
