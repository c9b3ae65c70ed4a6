//! Learning-rate schedules for the stochastic-approximation recursions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Validation failures for [`LearningRate`].
#[derive(Debug, Error, PartialEq)]
pub enum RateError {
    #[error("gamma1 must be a positive finite number, got {0}")]
    BadGamma1(f64),
    #[error("beta must lie in (1/2, 1], got {0}")]
    BadBeta(f64),
}

/// Polynomially decaying step-size schedule `γ_n = γ₁ (c + n)^{-β}`.
///
/// `β ∈ (1/2, 1]` guarantees `Σ γ_n = ∞` and `Σ γ_n² < ∞`. The shift `c ≥ 0`
/// tempers the early steps; `c = 0` is the plain schedule `γ₁ n^{-β}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RateSpec", into = "RateSpec")]
pub struct LearningRate {
    gamma1: f64,
    beta: f64,
    offset: u64,
}

/// Plain serializable mirror of [`LearningRate`] (pre-validation).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    pub gamma1: f64,
    pub beta: f64,
    #[serde(default)]
    pub offset: u64,
}

impl LearningRate {
    /// Validated constructor: `gamma1 > 0` finite, `beta ∈ (1/2, 1]`.
    pub fn new(gamma1: f64, beta: f64, offset: u64) -> Result<Self, RateError> {
        if !(gamma1 > 0.0 && gamma1.is_finite()) {
            return Err(RateError::BadGamma1(gamma1));
        }
        if !(beta > 0.5 && beta <= 1.0) {
            return Err(RateError::BadBeta(beta));
        }
        Ok(Self {
            gamma1,
            beta,
            offset,
        })
    }

    /// Step size `γ_n` at step `n ≥ 1`.
    #[inline]
    pub fn at(&self, n: u64) -> f64 {
        self.gamma1 * ((self.offset + n) as f64).powf(-self.beta)
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }
}

impl TryFrom<RateSpec> for LearningRate {
    type Error = RateError;
    fn try_from(s: RateSpec) -> Result<Self, RateError> {
        Self::new(s.gamma1, s.beta, s.offset)
    }
}

impl From<LearningRate> for RateSpec {
    fn from(r: LearningRate) -> Self {
        RateSpec {
            gamma1: r.gamma1,
            beta: r.beta,
            offset: r.offset,
        }
    }
}
