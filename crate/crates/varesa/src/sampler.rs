//! Nested simulation of the biased loss `X_h` and the perfectly-correlated
//! coarse/fine pairs that drive the multilevel schemes.
//!
//! The loss is a conditional expectation `X₀ = E[φ(Y,Z)|Y]`; `X_h` replaces it
//! with the empirical mean of `K = 1/h` conditionally i.i.d. payoff draws for
//! one fresh outer scenario `Y`. Costs are denominated in payoff evaluations —
//! outer draws are free.

use crate::sa::InnovationSource;
use crate::streams::StreamRng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

/// Validation/overflow failures in this module.
#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("inner sample count must be at least 1, got {0}")]
    BadInnerCount(u64),
    #[error("bias parameter does not describe 1/K for an integer K: h = {0}")]
    NotReciprocal(f64),
    #[error("inner sample count K·M^ℓ overflows: K = {k}, M = {m}, level = {level}")]
    LevelOverflow { k: u64, m: u32, level: u32 },
    #[error("coupled sampling requires level ≥ 1, got {0}")]
    BadLevel(u32),
    #[error("refinement factor M must be at least 2, got {0}")]
    BadRefinement(u32),
    #[error("coupling diagnostic requires at least 2 pairs, got {0}")]
    TooFewPairs(u64),
    #[error("model provides no exact loss")]
    NoExactLoss,
}

/// Bias parameter `h = 1/K`: the reciprocal of the inner sample count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct BiasParam {
    k: u64,
}

impl BiasParam {
    /// From the inner sample count `K ≥ 1`.
    pub fn new(k: u64) -> Result<Self, SamplerError> {
        if k >= 1 {
            Ok(Self { k })
        } else {
            Err(SamplerError::BadInnerCount(k))
        }
    }

    /// From a real bias `h` that must equal `1/K` for an integer `K`
    /// (tolerating float noise of one part in 10⁶).
    pub fn from_h(h: f64) -> Result<Self, SamplerError> {
        if !(h > 0.0 && h <= 1.0 && h.is_finite()) {
            return Err(SamplerError::NotReciprocal(h));
        }
        let k = (1.0 / h).round();
        if k < 1.0 || ((1.0 / h) - k).abs() > 1e-6 * k {
            return Err(SamplerError::NotReciprocal(h));
        }
        Self::new(k as u64)
    }

    /// Inner sample count `K`.
    #[inline]
    pub fn k(&self) -> u64 {
        self.k
    }

    /// Bias `h = 1/K`.
    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.k as f64
    }

    /// The refined parameter `h/M^ℓ`, i.e. inner count `K·M^ℓ`; errors on
    /// overflow.
    pub fn refined(&self, m: u32, level: u32) -> Result<Self, SamplerError> {
        if m < 2 {
            return Err(SamplerError::BadRefinement(m));
        }
        let factor = (m as u64)
            .checked_pow(level)
            .ok_or(SamplerError::LevelOverflow {
                k: self.k,
                m,
                level,
            })?;
        let k = self
            .k
            .checked_mul(factor)
            .ok_or(SamplerError::LevelOverflow {
                k: self.k,
                m,
                level,
            })?;
        Self::new(k)
    }
}

impl TryFrom<u64> for BiasParam {
    type Error = SamplerError;
    fn try_from(k: u64) -> Result<Self, SamplerError> {
        Self::new(k)
    }
}

impl From<BiasParam> for u64 {
    fn from(b: BiasParam) -> u64 {
        b.k
    }
}

/// Alias kept for call sites that read better with the error name.
pub type BiasParamError = SamplerError;

/// A loss of the form `X₀ = E[φ(Y,Z)|Y]`.
///
/// `sample_payoff` draws one `φ(Y,Z)` with fresh inner noise `Z`, i.i.d.
/// conditionally on the outer scenario. `exact_loss` returns the conditional
/// expectation itself when the model affords it (enabling unbiased schemes
/// and exact bias diagnostics).
pub trait LossModel: Sync {
    /// An outer scenario draw `Y`.
    type Outer;

    fn sample_outer(&self, rng: &mut StreamRng) -> Self::Outer;
    fn sample_payoff(&self, outer: &Self::Outer, rng: &mut StreamRng) -> f64;
    fn exact_loss(&self, _outer: &Self::Outer) -> Option<f64> {
        None
    }
}

/// One coarse/fine pair sharing the same outer scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledDraw {
    /// `X_{h_{ℓ−1}}`: mean of `K·M^{ℓ−1}` payoff draws.
    pub coarse: f64,
    /// `X_{h_ℓ}`: the coarse mean deflated by `M` plus the mean contribution
    /// of `K·M^{ℓ−1}(M−1)` additional draws.
    pub fine: f64,
    /// Payoff evaluations consumed: `K·M^ℓ`.
    pub cost: u64,
}

/// One biased draw `X_h`: mean of `K` payoffs off one fresh outer scenario.
pub fn sample_biased<M: LossModel>(model: &M, bias: BiasParam, rng: &mut StreamRng) -> f64 {
    let outer = model.sample_outer(rng);
    let mut sum = 0.0;
    for _ in 0..bias.k() {
        sum += model.sample_payoff(&outer, rng);
    }
    sum / bias.k() as f64
}

/// One perfectly-correlated pair `(X_{h_{ℓ−1}}, X_{h_ℓ})` for `level ≥ 1`.
///
/// The fine mean reuses every coarse draw arithmetically —
/// `fine = coarse/M + Σ(additional)/(K·M^ℓ)` — so memory stays O(1) in the
/// level.
pub fn sample_coupled<M: LossModel>(
    model: &M,
    k0: BiasParam,
    m: u32,
    level: u32,
    rng: &mut StreamRng,
) -> Result<CoupledDraw, SamplerError> {
    if level < 1 {
        return Err(SamplerError::BadLevel(level));
    }
    let fine_bias = k0.refined(m, level)?;
    let n_coarse = k0.refined(m, level - 1)?.k();
    let n_fine = fine_bias.k();
    let outer = model.sample_outer(rng);
    let mut sum_coarse = 0.0;
    for _ in 0..n_coarse {
        sum_coarse += model.sample_payoff(&outer, rng);
    }
    let coarse = sum_coarse / n_coarse as f64;
    let mut sum_extra = 0.0;
    for _ in 0..(n_fine - n_coarse) {
        sum_extra += model.sample_payoff(&outer, rng);
    }
    let fine = coarse / m as f64 + sum_extra / n_fine as f64;
    Ok(CoupledDraw {
        coarse,
        fine,
        cost: n_fine,
    })
}

/// Empirical mean and (unbiased) variance of the rescaled level increment
/// `G_ℓ = h_ℓ^{-1/2}(fine − coarse)` over `n_pairs` coupled draws.
pub fn coupling_diagnostic<M: LossModel>(
    model: &M,
    k0: BiasParam,
    m: u32,
    level: u32,
    n_pairs: u64,
    rng: &mut StreamRng,
) -> Result<(f64, f64), SamplerError> {
    if n_pairs < 2 {
        return Err(SamplerError::TooFewPairs(n_pairs));
    }
    let h_ell = k0.refined(m, level)?.h();
    let scale = h_ell.sqrt().recip();
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n_pairs {
        let draw = sample_coupled(model, k0, m, level, rng)?;
        let g = scale * (draw.fine - draw.coarse);
        let delta = g - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (g - mean);
    }
    Ok((mean, m2 / (n_pairs - 1) as f64))
}

/// Wrapper counting actual payoff evaluations; lets tests assert that
/// reported costs match calls exactly.
pub struct CountingModel<'m, M: LossModel> {
    inner: &'m M,
    payoff_calls: AtomicU64,
}

impl<'m, M: LossModel> CountingModel<'m, M> {
    pub fn new(inner: &'m M) -> Self {
        Self {
            inner,
            payoff_calls: AtomicU64::new(0),
        }
    }

    pub fn payoff_calls(&self) -> u64 {
        self.payoff_calls.load(Ordering::Relaxed)
    }
}

impl<M: LossModel> LossModel for CountingModel<'_, M> {
    type Outer = M::Outer;

    fn sample_outer(&self, rng: &mut StreamRng) -> Self::Outer {
        self.inner.sample_outer(rng)
    }

    fn sample_payoff(&self, outer: &Self::Outer, rng: &mut StreamRng) -> f64 {
        self.payoff_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.sample_payoff(outer, rng)
    }

    fn exact_loss(&self, outer: &Self::Outer) -> Option<f64> {
        self.inner.exact_loss(outer)
    }
}

/// Innovation source drawing `X_h` from a loss model.
pub struct BiasedSource<'m, M: LossModel> {
    model: &'m M,
    bias: BiasParam,
    rng: StreamRng,
    drawn: u64,
}

impl<'m, M: LossModel> BiasedSource<'m, M> {
    pub fn new(model: &'m M, bias: BiasParam, rng: StreamRng) -> Self {
        Self {
            model,
            bias,
            rng,
            drawn: 0,
        }
    }
}

impl<M: LossModel> InnovationSource for BiasedSource<'_, M> {
    fn next_innovation(&mut self) -> f64 {
        self.drawn += 1;
        sample_biased(self.model, self.bias, &mut self.rng)
    }

    fn cost(&self) -> u64 {
        self.drawn * self.bias.k()
    }
}

/// Innovation source drawing the exact loss `X₀ = exact_loss(Y)`; one payoff
/// evaluation is charged per draw. Construction fails for models without an
/// exact loss.
pub struct ExactSource<'m, M: LossModel> {
    model: &'m M,
    rng: StreamRng,
    drawn: u64,
}

impl<'m, M: LossModel> ExactSource<'m, M> {
    pub fn new(model: &'m M, rng: StreamRng) -> Result<Self, SamplerError> {
        // Probe on a throwaway clone so the caller's stream is untouched.
        let probe = model.sample_outer(&mut rng.clone());
        if model.exact_loss(&probe).is_none() {
            return Err(SamplerError::NoExactLoss);
        }
        Ok(Self {
            model,
            rng,
            drawn: 0,
        })
    }
}

impl<M: LossModel> InnovationSource for ExactSource<'_, M> {
    fn next_innovation(&mut self) -> f64 {
        self.drawn += 1;
        let outer = self.model.sample_outer(&mut self.rng);
        self.model
            .exact_loss(&outer)
            .expect("exact loss checked at construction")
    }

    fn cost(&self) -> u64 {
        self.drawn
    }
}
