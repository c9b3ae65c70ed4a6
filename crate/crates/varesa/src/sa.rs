//! Two-time-scale stochastic-approximation kernel.
//!
//! The VaR iterate descends the quantile criterion at the learning rate
//! `γ_{n+1}` while the ES iterate tracks the running mean of the
//! Rockafellar-Uryasev objective at the slower rate `1/(n+1)`:
//!
//! ```text
//! ξ_{n+1} = ξ_n − γ_{n+1} H₁(ξ_n, X^{(n+1)})
//! χ_{n+1} = χ_n − (n+1)⁻¹ H₂(ξ_n, χ_n, X^{(n+1)})
//! ```
//!
//! with `H₁(ξ, x) = 1 − 1_{x≥ξ}/(1−α)` and
//! `H₂(ξ, χ, x) = χ − ξ − (x−ξ)⁺/(1−α)`. A Polyak-Ruppert running average of
//! the post-update VaR iterates is maintained alongside.

use crate::rate::LearningRate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Validation failure for [`Confidence`].
#[derive(Debug, Error, PartialEq)]
#[error("confidence level must lie strictly inside (0, 1), got {0}")]
pub struct ConfidenceError(pub f64);

/// A confidence level `α ∈ (0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Confidence(f64);

impl Confidence {
    pub fn new(alpha: f64) -> Result<Self, ConfidenceError> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(ConfidenceError(alpha))
        }
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.0
    }

    /// The tail mass `1 − α`.
    #[inline]
    pub fn tail(&self) -> f64 {
        1.0 - self.0
    }
}

impl TryFrom<f64> for Confidence {
    type Error = ConfidenceError;
    fn try_from(v: f64) -> Result<Self, ConfidenceError> {
        Self::new(v)
    }
}

impl From<Confidence> for f64 {
    fn from(c: Confidence) -> f64 {
        c.0
    }
}

/// State of one two-time-scale chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaState {
    /// Current VaR iterate `ξ_n`.
    pub xi: f64,
    /// Current ES iterate `χ_n`.
    pub chi: f64,
    /// Steps taken.
    pub n: u64,
    /// Running average of the post-update VaR iterates, `(ξ_1 + … + ξ_n)/n`.
    pub xi_bar: f64,
    /// Cumulative payoff evaluations consumed by the innovations.
    pub cost: u64,
}

impl SaState {
    /// Fresh chain at `ξ₀ = xi0`, `χ₀ = 0`, `ξ̄₀ = 0`.
    pub fn new(xi0: f64) -> Self {
        Self {
            xi: xi0,
            chi: 0.0,
            n: 0,
            xi_bar: 0.0,
            cost: 0,
        }
    }
}

/// VaR gradient field: `1` below the iterate, `1 − 1/(1−α)` at or above it
/// (ties count as exceedances).
#[inline]
pub fn h1(xi: f64, x: f64, alpha: Confidence) -> f64 {
    if x >= xi {
        1.0 - 1.0 / alpha.tail()
    } else {
        1.0
    }
}

/// ES mean field: `χ − ξ − (x−ξ)⁺/(1−α)`.
#[inline]
pub fn h2(xi: f64, chi: f64, x: f64, alpha: Confidence) -> f64 {
    chi - xi - (x - xi).max(0.0) / alpha.tail()
}

/// One step of the two-time-scale recursion on innovation `x`.
///
/// The ES update uses the pre-update `ξ_n`; the running VaR average absorbs
/// the post-update `ξ_{n+1}`. `cost` is untouched — innovation cost is
/// accounted by the driver that produced `x`.
#[inline]
pub fn nsa_step(state: SaState, x: f64, rate: &LearningRate, alpha: Confidence) -> SaState {
    let n1 = state.n + 1;
    let w = 1.0 / n1 as f64;
    let xi = state.xi - rate.at(n1) * h1(state.xi, x, alpha);
    let chi = state.chi - w * h2(state.xi, state.chi, x, alpha);
    let xi_bar = state.xi_bar + w * (xi - state.xi_bar);
    SaState {
        xi,
        chi,
        n: n1,
        xi_bar,
        cost: state.cost,
    }
}

/// A source of loss innovations driving the recursion, with cost accounting.
pub trait InnovationSource {
    /// Next innovation `X^{(n+1)}`.
    fn next_innovation(&mut self) -> f64;
    /// Total payoff evaluations consumed so far.
    fn cost(&self) -> u64;
}

/// Failures of [`run_scheme`].
#[derive(Debug, Error, PartialEq)]
pub enum SaError {
    #[error("run_scheme requires at least one step")]
    ZeroSteps,
}

/// Run the recursion for `n_steps ≥ 1` innovations from `source`, starting at
/// `ξ₀ = xi0`. The returned state's `cost` is the number of payoff
/// evaluations the source reports for the run.
pub fn run_scheme<S: InnovationSource + ?Sized>(
    source: &mut S,
    n_steps: u64,
    rate: &LearningRate,
    alpha: Confidence,
    xi0: f64,
) -> Result<SaState, SaError> {
    run_scheme_observed(source, n_steps, rate, alpha, xi0, |_, _| {})
}

/// [`run_scheme`] with a per-step observer receiving the pre-step state and
/// the innovation — i.e. the pairs `(ξ_{k−1}, X^{(k)})` — before each update.
pub fn run_scheme_observed<S, F>(
    source: &mut S,
    n_steps: u64,
    rate: &LearningRate,
    alpha: Confidence,
    xi0: f64,
    mut observe: F,
) -> Result<SaState, SaError>
where
    S: InnovationSource + ?Sized,
    F: FnMut(&SaState, f64),
{
    if n_steps == 0 {
        return Err(SaError::ZeroSteps);
    }
    let cost_before = source.cost();
    let mut state = SaState::new(xi0);
    for _ in 0..n_steps {
        let x = source.next_innovation();
        observe(&state, x);
        state = nsa_step(state, x, rate, alpha);
    }
    state.cost = source.cost() - cost_before;
    Ok(state)
}

/// Innovation source replaying a fixed slice (cycling), charging one payoff
/// evaluation per draw. Intended for tests and deterministic diagnostics.
#[derive(Clone, Debug)]
pub struct SliceSource<'a> {
    data: &'a [f64],
    next: usize,
    drawn: u64,
}

impl<'a> SliceSource<'a> {
    pub fn new(data: &'a [f64]) -> Self {
        assert!(!data.is_empty(), "SliceSource needs at least one value");
        Self {
            data,
            next: 0,
            drawn: 0,
        }
    }
}

impl InnovationSource for SliceSource<'_> {
    fn next_innovation(&mut self) -> f64 {
        let x = self.data[self.next];
        self.next = (self.next + 1) % self.data.len();
        self.drawn += 1;
        x
    }

    fn cost(&self) -> u64 {
        self.drawn
    }
}
