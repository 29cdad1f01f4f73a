//! Seeded random search over the tuned hyperparameter ranges.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{run::deep_run_metrics, ExperimentError, Result};
use crate::features::{DayData, Split};
use crate::models::{ModelConfig, ModelKind};
use crate::nn::Normalization;

const NORMALIZATIONS: [Normalization; 4] =
    [Normalization::None, Normalization::Batch, Normalization::Layer, Normalization::Weight];

/// Closed bounds per hyperparameter. Learning rate and weight decay are
/// sampled log-uniformly; the rest uniformly. Architecture ranges apply to
/// TCNs only; recurrent models search width, dropout, ε, learning rate and
/// weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchSpace {
    pub kind: ModelKind,
    pub width: (usize, usize),
    pub dropout: (f64, f64),
    pub epsilon: (f64, f64),
    pub learning_rate: (f64, f64),
    pub weight_decay: (f64, f64),
    pub kernel_size: (usize, usize),
    pub dilation_base: (usize, usize),
}

impl SearchSpace {
    /// The full search ranges.
    pub fn for_kind(kind: ModelKind) -> Self {
        SearchSpace {
            kind,
            width: (32, 512),
            dropout: (0.0, 0.5),
            epsilon: (0.01, 0.1),
            learning_rate: (1e-7, 1e-2),
            weight_decay: (1e-9, 1e-2),
            kernel_size: (2, 6),
            dilation_base: (2, 4),
        }
    }

    fn is_tcn(&self) -> bool {
        matches!(self.kind, ModelKind::Tcn | ModelKind::Dtcn)
    }

    /// Every range must be ordered and lie inside the full one.
    pub fn validate(&self) -> Result<()> {
        let full = Self::for_kind(self.kind);
        fn inside<T: PartialOrd + Copy + std::fmt::Debug>(name: &str, r: (T, T), full: (T, T)) -> Result<()> {
            if r.0 > r.1 || r.0 < full.0 || r.1 > full.1 {
                return Err(ExperimentError::Config(format!(
                    "hpo.{name} range {r:?} must be ordered and within {full:?}"
                )));
            }
            Ok(())
        }
        inside("width", self.width, full.width)?;
        inside("dropout", self.dropout, full.dropout)?;
        inside("epsilon", self.epsilon, full.epsilon)?;
        inside("learning_rate", self.learning_rate, full.learning_rate)?;
        inside("weight_decay", self.weight_decay, full.weight_decay)?;
        inside("kernel_size", self.kernel_size, full.kernel_size)?;
        inside("dilation_base", self.dilation_base, full.dilation_base)
    }

    /// Draws one configuration; parameters outside the space come from `base`.
    pub fn sample(&self, base: &ModelConfig, rng: &mut ChaCha8Rng) -> ModelConfig {
        let log_uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| -> f64 {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)
            }
        };
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let mut c = base.clone();
        c.width = rng.random_range(self.width.0..=self.width.1);
        c.dropout = uniform(rng, self.dropout);
        c.epsilon = uniform(rng, self.epsilon);
        c.learning_rate = log_uniform(rng, self.learning_rate);
        c.weight_decay = log_uniform(rng, self.weight_decay);
        if self.is_tcn() {
            c.kernel_size = rng.random_range(self.kernel_size.0..=self.kernel_size.1);
            c.dilation_base = rng.random_range(self.dilation_base.0..=self.dilation_base.1);
            c.skip_connections = rng.random_bool(0.5);
            c.normalization = NORMALIZATIONS[rng.random_range(0..NORMALIZATIONS.len())];
        }
        c
    }

    pub fn contains(&self, c: &ModelConfig) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        let ok = (self.width.0..=self.width.1).contains(&c.width)
            && within(c.dropout, self.dropout)
            && within(c.epsilon, self.epsilon)
            && within(c.learning_rate, self.learning_rate)
            && within(c.weight_decay, self.weight_decay);
        ok && (!self.is_tcn()
            || ((self.kernel_size.0..=self.kernel_size.1).contains(&c.kernel_size)
                && (self.dilation_base.0..=self.dilation_base.1).contains(&c.dilation_base)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    pub config: ModelConfig,
    /// Validation MAPE, or the failure message.
    pub outcome: std::result::Result<f64, String>,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub trials: Vec<Trial>,
    pub best: usize,
}

impl SearchResult {
    pub fn best_trial(&self) -> &Trial {
        &self.trials[self.best]
    }

    pub fn best_mape(&self) -> f64 {
        self.best_trial().outcome.clone().expect("best trial succeeded")
    }

    /// One row per trial in evaluation order.
    pub fn trial_log_csv(&self) -> String {
        let mut out = String::from(
            "trial,seed,width,dropout,epsilon,learning_rate,weight_decay,kernel_size,dilation_base,skip_connections,normalization,status,validation_mape\n",
        );
        for t in &self.trials {
            let c = &t.config;
            let (status, mape) = match &t.outcome {
                Ok(m) => ("ok".to_string(), m.to_string()),
                Err(e) => (format!("failed: {}", e.replace([',', '\n'], " ")), String::new()),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                t.index,
                t.seed,
                c.width,
                c.dropout,
                c.epsilon,
                c.learning_rate,
                c.weight_decay,
                c.kernel_size,
                c.dilation_base,
                c.skip_connections,
                c.normalization,
                status,
                mape
            )
            .unwrap();
        }
        out
    }
}

/// Trains one model per sampled configuration on the first `train_days` of
/// the training horizon and scores MAPE on the following `validation_days`.
/// Trial `i` samples from, and trains with, seed `seed + i`.
pub fn random_search(
    days: &[DayData],
    space: &SearchSpace,
    base: &ModelConfig,
    train_days: usize,
    validation_days: usize,
    budget: usize,
    seed: u64,
) -> Result<SearchResult> {
    if budget == 0 {
        return Err(ExperimentError::Config("search budget must be at least 1".into()));
    }
    space.validate()?;
    if base.kind == ModelKind::Dtcn {
        return Err(ExperimentError::Config("search the TCN and compare feature sets with ablation".into()));
    }
    let split = Split::new(days, train_days, validation_days, None)?;
    let trials: Vec<Trial> = (0..budget)
        .into_par_iter()
        .map(|i| {
            let trial_seed = seed.wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
            let config = space.sample(base, &mut rng);
            let outcome = deep_run_metrics(&config, trial_seed, &split)
                .map_err(|e| e.to_string())
                .and_then(|m| m.mape.ok_or_else(|| "MAPE undefined".to_string()));
            log::info!("trial {i}: {:?}", outcome);
            Trial { index: i, seed: trial_seed, config, outcome }
        })
        .collect();
    let best = trials
        .iter()
        .filter_map(|t| t.outcome.as_ref().ok().filter(|m| m.is_finite()).map(|m| (t.index, *m)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or(ExperimentError::AllTrialsFailed(budget))?;
    Ok(SearchResult { trials, best })
}
