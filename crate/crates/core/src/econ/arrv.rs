//! Autoregression on daily realized volatility.

use nalgebra::{DMatrix, DVector};

use super::{EconError, Result};

/// `RV_t = c + Σ_k φ_k RV_{t−k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArRv {
    pub intercept: f64,
    /// `φ_1..φ_p`, most recent lag first.
    pub coefficients: Vec<f64>,
    /// OLS standard errors of `[c, φ_1..φ_p]`; NaN for an exactly solved
    /// singular design.
    pub std_errors: Vec<f64>,
}

const RANK_TOL: f64 = 1e-10;

impl ArRv {
    /// Ordinary least squares on one-step-ahead pairs. A singular design is
    /// an error unless the data fit it exactly (e.g. a constant series), in
    /// which case the minimum-norm solution is returned.
    pub fn fit(series: &[f64], p: usize) -> Result<Self> {
        if series.len() <= p + 1 {
            return Err(EconError::TooShort { len: series.len(), need: p + 1 });
        }
        if series.iter().any(|v| !v.is_finite()) {
            return Err(EconError::NonFinite);
        }
        let (x, y) = design(series, p);
        let svd = x.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let eps = smax * RANK_TOL;
        let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
        let beta = svd.solve(&y, eps).map_err(|_| EconError::RankDeficient)?;
        let resid = &y - &x * &beta;
        let full = rank == p + 1;
        if !full && resid.norm() > 1e-12 * y.norm().max(1.0) {
            return Err(EconError::RankDeficient);
        }
        let std_errors = if full && y.len() > p + 1 {
            let sigma2 = resid.norm_squared() / (y.len() - p - 1) as f64;
            let xtx_inv = (x.transpose() * &x)
                .try_inverse()
                .ok_or(EconError::RankDeficient)?;
            (0..=p).map(|i| (sigma2 * xtx_inv[(i, i)]).sqrt()).collect()
        } else {
            vec![f64::NAN; p + 1]
        };
        Ok(ArRv {
            intercept: beta[0],
            coefficients: beta.iter().skip(1).copied().collect(),
            std_errors,
        })
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    /// Next value from the last `p` observations in chronological order.
    pub fn predict(&self, recent: &[f64]) -> Result<f64> {
        let p = self.order();
        if recent.len() != p {
            return Err(EconError::LagCount { expected: p, got: recent.len() });
        }
        Ok(self.intercept
            + self
                .coefficients
                .iter()
                .zip(recent.iter().rev())
                .map(|(c, v)| c * v)
                .sum::<f64>())
    }
}

/// Rows `[1, RV_{t−1}, …, RV_{t−p}]` and targets `RV_t` for `t = p..n`.
fn design(series: &[f64], p: usize) -> (DMatrix<f64>, DVector<f64>) {
    let m = series.len() - p;
    let x = DMatrix::from_fn(m, p + 1, |r, c| if c == 0 { 1.0 } else { series[r + p - c] });
    let y = DVector::from_fn(m, |r, _| series[r + p]);
    (x, y)
}
