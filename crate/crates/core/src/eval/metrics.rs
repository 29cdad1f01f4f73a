//! MAPE, MAE, RMSE and MSLE over daily RV forecasts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mape,
    Mae,
    Rmse,
    Msle,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mape, Metric::Mae, Metric::Rmse, Metric::Msle];
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Mape => "MAPE",
            Metric::Mae => "MAE",
            Metric::Rmse => "RMSE",
            Metric::Msle => "MSLE",
        })
    }
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mape" => Ok(Metric::Mape),
            "mae" => Ok(Metric::Mae),
            "rmse" => Ok(Metric::Rmse),
            "msle" => Ok(Metric::Msle),
            _ => Err(EvalError::InvalidArgument(format!("unknown metric {s:?}"))),
        }
    }
}

/// The four error metrics of one run. MAPE is undefined when some true RV
/// is not positive; MSLE when some value is at or below −1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub mape: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub msle: Option<f64>,
}

impl MetricVector {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Mape => self.mape,
            Metric::Mae => Some(self.mae),
            Metric::Rmse => Some(self.rmse),
            Metric::Msle => self.msle,
        }
    }
}

pub fn metrics(y: &[f64], y_hat: &[f64]) -> Result<MetricVector> {
    if y.len() != y_hat.len() {
        return Err(EvalError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(EvalError::TooFew { need: 1, got: 0 });
    }
    if y.iter().chain(y_hat).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let n = y.len() as f64;
    let pairs = || y.iter().zip(y_hat);
    let mape = y
        .iter()
        .all(|&v| v > 0.0)
        .then(|| pairs().map(|(a, b)| ((a - b) / a).abs()).sum::<f64>() / n);
    let mae = pairs().map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let rmse = (pairs().map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt();
    let msle = y.iter().chain(y_hat).all(|&v| v > -1.0).then(|| {
        pairs()
            .map(|(a, b)| {
                let d = a.ln_1p() - b.ln_1p();
                d * d
            })
            .sum::<f64>()
            / n
    });
    Ok(MetricVector { mape, mae, rmse, msle })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_case() {
        let m = metrics(&[2.0], &[1.0]).unwrap();
        assert_eq!(m.mape, Some(0.5));
        assert_eq!(m.mae, 1.0);
        assert_eq!(m.rmse, 1.0);
        let expected = (3.0f64.ln() - 2.0f64.ln()).powi(2);
        assert!((m.msle.unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.1644).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_doubled() {
        let y = [0.3, 1.2, 0.8];
        let m = metrics(&y, &y).unwrap();
        assert_eq!((m.mape, m.mae, m.rmse, m.msle), (Some(0.0), 0.0, 0.0, Some(0.0)));
        let twice: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        assert_eq!(metrics(&y, &twice).unwrap().mape, Some(1.0));
        assert_eq!(metrics(&y, &[0.0; 3]).unwrap().mape, Some(1.0));
    }

    #[test]
    fn undefined_cases() {
        let m = metrics(&[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(m.mape, None);
        assert!(m.msle.is_some());
        assert_eq!(metrics(&[1.0], &[-2.0]).unwrap().msle, None);
        assert!(metrics(&[1.0], &[1.0, 2.0]).is_err());
        assert!(metrics(&[], &[]).is_err());
    }

    #[test]
    fn under_and_over_prediction_penalties() {
        // Per-case comparison of the log1p penalties for y/c against y·c.
        for (y, c) in [(0.02, 1.5), (0.5, 2.0), (3.0, 1.2), (10.0, 3.0)] {
            let under = metrics(&[y], &[y / c]).unwrap().msle.unwrap();
            let over = metrics(&[y], &[y * c]).unwrap().msle.unwrap();
            let lu = ((y / c + 1.0) / (y + 1.0)).ln().abs();
            let lo = ((y * c + 1.0) / (y + 1.0)).ln().abs();
            assert_eq!(under > over, lu > lo);
        }
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((0.01f64..5.0, 0.0f64..5.0), 1..40)) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = metrics(&y, &p).unwrap();
            prop_assert!(m.rmse >= m.mae - 1e-12);
        }

        #[test]
        fn permutation_invariant(pairs in prop::collection::vec((0.01f64..5.0, 0.0f64..5.0), 2..20), k in 0usize..100) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut shuffled = pairs.clone();
            shuffled.rotate_left(k % pairs.len());
            shuffled.swap(0, pairs.len() - 1);
            let (ys, ps): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
            let a = metrics(&y, &p).unwrap();
            let b = metrics(&ys, &ps).unwrap();
            prop_assert!((a.mape.unwrap() - b.mape.unwrap()).abs() < 1e-12);
            prop_assert!((a.mae - b.mae).abs() < 1e-12);
            prop_assert!((a.rmse - b.rmse).abs() < 1e-12);
            prop_assert!((a.msle.unwrap() - b.msle.unwrap()).abs() < 1e-12);
        }

        #[test]
        fn msle_is_symmetric(pairs in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), 1..20)) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = metrics(&y, &p).unwrap().msle.unwrap();
            let b = metrics(&p, &y).unwrap().msle.unwrap();
            prop_assert!((a - b).abs() < 1e-15);
        }

        #[test]
        fn equal_abs_errors_give_equal_rmse_and_mae(y in prop::collection::vec(1.0f64..5.0, 1..20), e in 0.0f64..0.5) {
            let p: Vec<f64> = y.iter().enumerate().map(|(i, v)| if i % 2 == 0 { v + e } else { v - e }).collect();
            let m = metrics(&y, &p).unwrap();
            prop_assert!((m.rmse - m.mae).abs() < 1e-12);
        }
    }
}
