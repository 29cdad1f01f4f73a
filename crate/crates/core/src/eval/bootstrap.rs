//! Percentile bootstrap bands over repeated runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{quantile_sorted, EvalError, Result};

/// Per-day interval around the cross-run mean prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapBand {
    pub lower: Vec<f64>,
    pub mean: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Resamples whole runs with replacement `samples` times and takes the
/// per-day percentile interval of the resampled means at `level`. The band
/// is widened, if needed, to include the observed mean.
pub fn bootstrap_band(runs: &[Vec<f64>], samples: usize, level: f64, seed: u64) -> Result<BootstrapBand> {
    if runs.len() < 2 {
        return Err(EvalError::TooFew { need: 2, got: runs.len() });
    }
    if !(0.0 < level && level < 1.0) || samples == 0 {
        return Err(EvalError::InvalidArgument("level must be in (0, 1) and samples positive".into()));
    }
    let days = runs[0].len();
    if let Some(r) = runs.iter().find(|r| r.len() != days) {
        return Err(EvalError::LengthMismatch(days, r.len()));
    }
    let k = runs.len();
    let mean: Vec<f64> = (0..days)
        .map(|d| runs.iter().map(|r| r[d]).sum::<f64>() / k as f64)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resampled = vec![Vec::with_capacity(samples); days];
    for _ in 0..samples {
        let picks: Vec<usize> = (0..k).map(|_| rng.random_range(0..k)).collect();
        for (d, col) in resampled.iter_mut().enumerate() {
            col.push(picks.iter().map(|&i| runs[i][d]).sum::<f64>() / k as f64);
        }
    }
    let tail = (1.0 - level) / 2.0;
    let mut lower = Vec::with_capacity(days);
    let mut upper = Vec::with_capacity(days);
    for (d, col) in resampled.iter_mut().enumerate() {
        col.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(col, tail).min(mean[d]));
        upper.push(quantile_sorted(col, 1.0 - tail).max(mean[d]));
    }
    Ok(BootstrapBand { lower, mean, upper })
}
