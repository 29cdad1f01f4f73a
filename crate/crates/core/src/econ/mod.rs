//! Econometric baselines: AR-RV by least squares and GARCH(1,1) by Gaussian
//! maximum likelihood.

pub mod arrv;
pub mod garch;
pub mod nelder_mead;

use thiserror::Error;

pub use arrv::ArRv;
pub use garch::{Garch, GarchState};

#[derive(Debug, Error)]
pub enum EconError {
    #[error("series of length {len} is too short (need more than {need})")]
    TooShort { len: usize, need: usize },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("expected {expected} lagged values, got {got}")]
    LagCount { expected: usize, got: usize },
    #[error("non-finite value in input series")]
    NonFinite,
    #[error("GARCH fit did not converge in {iterations} iterations")]
    NotConverged { iterations: usize, best: Box<Garch> },
}

pub type Result<T> = std::result::Result<T, EconError>;
