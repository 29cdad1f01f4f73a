//! MAPE restricted to quantile buckets of the true values.

use super::{quantile_sorted, EvalError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BucketMape {
    pub label: String,
    pub bucket: usize,
    pub lower: f64,
    pub upper: f64,
    pub days: usize,
    /// `None` for an empty bucket.
    pub mape: Option<f64>,
}

/// Splits days by the quantiles of `y` into `buckets` groups (the first
/// closed, the rest half-open on the left) and reports each model's MAPE
/// per group.
pub fn percentile_mape(y: &[f64], models: &[(String, Vec<f64>)], buckets: usize) -> Result<Vec<BucketMape>> {
    if y.is_empty() || buckets == 0 {
        return Err(EvalError::TooFew { need: 1, got: 0 });
    }
    if y.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(EvalError::InvalidArgument("true values must be positive for MAPE".into()));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (0..=buckets)
        .map(|i| quantile_sorted(&sorted, i as f64 / buckets as f64))
        .collect();
    let bucket_of = |v: f64| -> usize {
        (1..buckets).take_while(|&b| v > edges[b]).count()
    };
    let assignment: Vec<usize> = y.iter().map(|&v| bucket_of(v)).collect();
    let mut out = Vec::new();
    for (label, pred) in models {
        if pred.len() != y.len() {
            return Err(EvalError::LengthMismatch(y.len(), pred.len()));
        }
        for b in 0..buckets {
            let errs: Vec<f64> = (0..y.len())
                .filter(|&i| assignment[i] == b)
                .map(|i| ((y[i] - pred[i]) / y[i]).abs())
                .collect();
            out.push(BucketMape {
                label: label.clone(),
                bucket: b,
                lower: edges[b],
                upper: edges[b + 1],
                days: errs.len(),
                mape: (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64),
            });
        }
    }
    Ok(out)
}
