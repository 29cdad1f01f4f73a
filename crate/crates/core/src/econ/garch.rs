//! GARCH(1,1) with Gaussian innovations.

use super::nelder_mead::{self, NelderMeadOptions};
use super::{EconError, Result};

const MIN_LEN: usize = 50;
/// Upper bound on `α + β` so the fitted process stays covariance-stationary.
const MAX_PERSISTENCE: f64 = 1.0 - 1e-6;

/// Fitted `σ²_t = ω + α r²_{t−1} + β σ²_{t−1}` on demeaned returns.
#[derive(Debug, Clone, PartialEq)]
pub struct Garch {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Mean removed before fitting.
    pub mean: f64,
    /// Variance of the demeaned sample; stands in for pre-sample `r²` and
    /// `σ²`.
    pub sample_variance: f64,
    /// Conditional variances over the fitting sample.
    pub variances: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// Last squared shock and conditional variance after filtering a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarchState {
    pub last_sq_return: f64,
    pub last_variance: f64,
}

/// Which parameters the fit may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GarchRestriction {
    None,
    /// `α = β = 0`: a constant-variance Gaussian.
    ConstantVariance,
}

fn demean(returns: &[f64]) -> (f64, Vec<f64>, f64) {
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let e: Vec<f64> = returns.iter().map(|r| r - mean).collect();
    let var = e.iter().map(|x| x * x).sum::<f64>() / n;
    (mean, e, var)
}

/// Conditional variances with pre-sample `r²` and `σ²` set to `s2`.
fn filter(omega: f64, alpha: f64, beta: f64, e: &[f64], s2: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(e.len());
    let (mut prev_r2, mut prev_var) = (s2, s2);
    for &x in e {
        let v = omega + alpha * prev_r2 + beta * prev_var;
        out.push(v);
        prev_r2 = x * x;
        prev_var = v;
    }
    out
}

/// `Σ −½(log σ²_t + r²_t / σ²_t)`.
pub fn log_likelihood(omega: f64, alpha: f64, beta: f64, e: &[f64], s2: f64) -> f64 {
    let mut ll = 0.0;
    let (mut prev_r2, mut prev_var) = (s2, s2);
    for &x in e {
        let v = omega + alpha * prev_r2 + beta * prev_var;
        if !(v > 0.0) {
            return f64::NEG_INFINITY;
        }
        ll -= 0.5 * (v.ln() + x * x / v);
        prev_r2 = x * x;
        prev_var = v;
    }
    ll
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `(log ω, logit of persistence, logit of α's share)` ↦ `(ω, α, β)`.
fn unpack(theta: &[f64]) -> (f64, f64, f64) {
    let omega = theta[0].exp();
    let persistence = MAX_PERSISTENCE * logistic(theta[1]);
    let share = logistic(theta[2]);
    (omega, persistence * share, persistence * (1.0 - share))
}

impl Garch {
    pub fn fit(returns: &[f64]) -> Result<Self> {
        Self::fit_restricted(returns, GarchRestriction::None)
    }

    /// Maximum-likelihood fit by Nelder–Mead. Two starting points (low and
    /// high persistence) are tried and the better optimum kept. On an
    /// exhausted iteration budget the best point is returned inside
    /// [`EconError::NotConverged`].
    pub fn fit_restricted(returns: &[f64], restriction: GarchRestriction) -> Result<Self> {
        if returns.len() < MIN_LEN {
            return Err(EconError::TooShort { len: returns.len(), need: MIN_LEN - 1 });
        }
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(EconError::NonFinite);
        }
        let (mean, e, s2) = demean(returns);
        if !(s2 > 0.0) {
            return Err(EconError::RankDeficient);
        }
        let opts = NelderMeadOptions {
            max_iterations: 4000,
            f_tolerance: 1e-12,
            x_tolerance: 1e-7,
        };
        let (omega, alpha, beta, iterations, converged) = match restriction {
            GarchRestriction::ConstantVariance => {
                let r = nelder_mead::minimize(
                    |t| -log_likelihood(t[0].exp(), 0.0, 0.0, &e, s2),
                    &[(0.5 * s2).ln()],
                    &[0.5],
                    opts,
                );
                (r.x[0].exp(), 0.0, 0.0, r.iterations, r.converged)
            }
            GarchRestriction::None => {
                let starts = [(0.1, 0.5), (0.95, 0.1)];
                let mut best: Option<nelder_mead::NelderMeadResult> = None;
                let mut total = 0;
                for (persistence, share) in starts {
                    let x0 = [(s2 * (1.0 - persistence)).ln(), logit(persistence / MAX_PERSISTENCE), logit(share)];
                    let r = nelder_mead::minimize(
                        |t| {
                            let (w, a, b) = unpack(t);
                            -log_likelihood(w, a, b, &e, s2)
                        },
                        &x0,
                        &[0.5, 1.0, 1.0],
                        opts,
                    );
                    total += r.iterations;
                    if best.as_ref().is_none_or(|b| r.value < b.value) {
                        best = Some(r);
                    }
                }
                let r = best.expect("at least one start");
                let (w, a, b) = unpack(&r.x);
                (w, a, b, total, r.converged)
            }
        };
        let model = Garch {
            omega,
            alpha,
            beta,
            mean,
            sample_variance: s2,
            variances: filter(omega, alpha, beta, &e, s2),
            log_likelihood: log_likelihood(omega, alpha, beta, &e, s2),
            iterations,
        };
        if converged {
            Ok(model)
        } else {
            Err(EconError::NotConverged { iterations, best: Box::new(model) })
        }
    }

    /// Runs the recursion over `returns` (raw, the fitted mean is removed)
    /// starting from the pre-sample values.
    pub fn state_after(&self, returns: &[f64]) -> GarchState {
        let mut state = GarchState {
            last_sq_return: self.sample_variance,
            last_variance: self.sample_variance,
        };
        for &r in returns {
            let v = self.omega + self.alpha * state.last_sq_return + self.beta * state.last_variance;
            let e = r - self.mean;
            state = GarchState { last_sq_return: e * e, last_variance: v };
        }
        state
    }

    /// Conditional variances `σ²_{t+1..t+h}`, with `E[r²] = σ²` substituted
    /// beyond the first step.
    pub fn variance_path(&self, state: GarchState, horizon: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(horizon);
        let mut v = self.omega + self.alpha * state.last_sq_return + self.beta * state.last_variance;
        for _ in 0..horizon {
            out.push(v);
            v = self.omega + (self.alpha + self.beta) * v;
        }
        out
    }

    /// `sqrt(Σ σ²)` over the next `horizon` steps: the next day's RV for a
    /// 96-step horizon at 15-minute frequency.
    pub fn forecast_rv(&self, state: GarchState, horizon: usize) -> f64 {
        self.variance_path(state, horizon).iter().sum::<f64>().sqrt()
    }
}
