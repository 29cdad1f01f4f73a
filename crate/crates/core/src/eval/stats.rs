//! One-sided t-tests for "model error is lower than baseline error".

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{mean, variance, EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    /// Pooled-variance two-sample test; a single baseline value is treated
    /// as a fixed mean (one-sample test).
    Student,
    /// Unequal-variance test with Welch–Satterthwaite degrees of freedom.
    Welch,
}

fn lower_tail(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t < 0.0 { 0.0 } else { 1.0 };
    }
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").cdf(t)
}

/// `P(T ≤ t)` for the mean of `scores` against a fixed `baseline`.
pub fn one_sample_t(scores: &[f64], baseline: f64) -> Result<f64> {
    if scores.len() < 2 {
        return Err(EvalError::TooFew { need: 2, got: scores.len() });
    }
    if scores.iter().any(|v| !v.is_finite()) || !baseline.is_finite() {
        return Err(EvalError::NonFinite);
    }
    let n = scores.len() as f64;
    let se = (variance(scores) / n).sqrt();
    let diff = mean(scores) - baseline;
    if se == 0.0 {
        if diff == 0.0 {
            return Err(EvalError::ZeroVariance);
        }
        return Ok(if diff < 0.0 { 0.0 } else { 1.0 });
    }
    Ok(lower_tail(diff / se, n - 1.0))
}

/// One-sided p-value for H1: mean(model) < mean(baseline).
pub fn one_sided_t(baseline: &[f64], model: &[f64], kind: TTestKind) -> Result<f64> {
    if model.len() < 2 {
        return Err(EvalError::TooFew { need: 2, got: model.len() });
    }
    if baseline.is_empty() {
        return Err(EvalError::TooFew { need: 1, got: 0 });
    }
    if baseline.iter().chain(model).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    if baseline.len() == 1 {
        return match kind {
            TTestKind::Student => one_sample_t(model, baseline[0]),
            TTestKind::Welch => Err(EvalError::TooFew { need: 2, got: 1 }),
        };
    }
    let (n1, n2) = (model.len() as f64, baseline.len() as f64);
    let (v1, v2) = (variance(model), variance(baseline));
    if v1 == 0.0 && v2 == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    let diff = mean(model) - mean(baseline);
    let (t, df) = match kind {
        TTestKind::Student => {
            let df = n1 + n2 - 2.0;
            let pooled = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / df;
            (diff / (pooled * (1.0 / n1 + 1.0 / n2)).sqrt(), df)
        }
        TTestKind::Welch => {
            let (a, b) = (v1 / n1, v2 / n2);
            let df = (a + b).powi(2) / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0));
            (diff / (a + b).sqrt(), df)
        }
    };
    Ok(lower_tail(t, df))
}

/// `***` below 0.001, `**` below 0.01, `*` below 0.05, `.` below 0.1.
pub fn significance_code(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "."
    } else {
        ""
    }
}
