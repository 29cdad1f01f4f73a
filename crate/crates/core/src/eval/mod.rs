//! Error metrics, significance tests, bootstrap bands, percentile-bucketed
//! errors and report rendering.

pub mod bootstrap;
pub mod metrics;
pub mod percentile;
pub mod plot;
pub mod stats;
pub mod table;

use thiserror::Error;

pub use bootstrap::{bootstrap_band, BootstrapBand};
pub use metrics::{metrics, Metric, MetricVector};
pub use percentile::{percentile_mape, BucketMape};
pub use stats::{one_sample_t, one_sided_t, significance_code, TTestKind};
pub use table::{render_csv, render_text, MetricSummary, SignificanceEntry};
pub use plot::{line_chart, Series};
pub(crate) use table::csv_field;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("both samples have zero variance")]
    ZeroVariance,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance; zero for a single value.
pub(crate) fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Linear-interpolation quantile of sorted data (numpy's default).
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
