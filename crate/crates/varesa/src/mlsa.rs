//! Multilevel estimators: telescopic VaR/ES sums over a geometric ladder of
//! bias parameters `h_ℓ = h₀/M^ℓ`, with the per-level iteration schedules and
//! the accuracy-to-parameter maps for all four schemes.
//!
//! The multilevel estimator decomposes `ξ^{h_L}` as `ξ^{h₀}` plus a sum of
//! level corrections `ξ^{h_ℓ} − ξ^{h_{ℓ−1}}`, each estimated by a pair of
//! recursions driven by perfectly-correlated coupled innovations. Because the
//! corrections shrink with `ℓ`, the fine levels need far fewer iterations
//! than a single-level run at bias `h_L`, which is where the complexity gain
//! (ε^{−2−1/β}·|ln ε|^{1/β} vs ε^{−2−2/β} payoff evaluations) comes from.

use crate::rate::LearningRate;
use crate::sa::{nsa_step, run_scheme, Confidence, SaError, SaState};
use crate::sampler::{sample_coupled, BiasParam, BiasedSource, LossModel, SamplerError};
use crate::streams::{level_rng, StreamRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failures of multilevel configuration or execution.
#[derive(Debug, Error, PartialEq)]
pub enum MlsaError {
    #[error("schedule must have num_levels+1 = {expected} entries, got {got}")]
    ScheduleLength { expected: usize, got: usize },
    #[error("schedule entries must all be ≥ 1")]
    EmptyLevel,
    #[error("schedule must be non-increasing from level 1 onward")]
    IncreasingSchedule,
    #[error("target accuracy {epsilon} must lie strictly below the coarsest bias {h0}")]
    AccuracyNotFiner { epsilon: f64, h0: f64 },
    #[error("accuracy must lie in (0,1), got {0}")]
    BadAccuracy(f64),
    #[error("step exponent must lie in (1/2, 1], got {0}")]
    BadBeta(f64),
    #[error("initial iterate must be finite, got {0}")]
    BadInitial(f64),
    #[error("iteration count overflows the supported integer range")]
    CountOverflow,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Sa(#[from] SaError),
}

/// Ceiling with a guard against floating-point overshoot: a value within
/// `1e-9 + 1e-12·|x|` above an integer counts as that integer (so e.g.
/// `log2(8) = 3.0000000000000004` ceilings to 3, not 4). Clamped below at 1;
/// `None` when `x` is not finite or beyond the exactly-representable range.
pub(crate) fn ceil_int(x: f64) -> Option<u64> {
    if !x.is_finite() {
        return None;
    }
    let c = (x - (1e-9 + 1e-12 * x.abs())).ceil();
    if c >= 9.007_199_254_740_992e15 {
        return None;
    }
    Some(if c < 1.0 { 1 } else { c as u64 })
}

/// Bias parameter of level `ℓ`: `h_ℓ = h₀/M^ℓ`, i.e. `1/(K·M^ℓ)`.
pub fn level_bias(h0: BiasParam, m: u32, ell: u32) -> Result<BiasParam, MlsaError> {
    Ok(h0.refined(m, ell)?)
}

/// Number of refinement levels needed to push the bias of the finest level to
/// the target accuracy: `L = ⌈ln(h₀/ε)/ln M⌉`. Requires `h₀ > ε` (a coarsest
/// level at least as fine as the target leaves nothing to refine).
pub fn levels_for_accuracy(epsilon: f64, h0: BiasParam, m: u32) -> Result<u32, MlsaError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(MlsaError::BadAccuracy(epsilon));
    }
    if m < 2 {
        return Err(SamplerError::BadRefinement(m).into());
    }
    if h0.h() <= epsilon {
        return Err(MlsaError::AccuracyNotFiner {
            epsilon,
            h0: h0.h(),
        });
    }
    let raw = (h0.h() / epsilon).ln() / f64::from(m).ln();
    let ell = ceil_int(raw).ok_or(MlsaError::CountOverflow)?;
    u32::try_from(ell).map_err(|_| MlsaError::CountOverflow)
}

/// Single-level (nested) parameters achieving accuracy `ε`: bias `h = 1/K`
/// with `K = ⌈ε^{−1/β}⌉` and `n = K²` iterations. With `β = 1` this is the
/// optimal nested tuning; the averaged scheme uses the same map with `β`
/// free in `(1/2, 1)`.
pub fn nsa_params_for_accuracy(epsilon: f64, beta: f64) -> Result<(BiasParam, u64), MlsaError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(MlsaError::BadAccuracy(epsilon));
    }
    if !(beta > 0.5 && beta <= 1.0) {
        return Err(MlsaError::BadBeta(beta));
    }
    let k = ceil_int(epsilon.powf(-1.0 / beta)).ok_or(MlsaError::CountOverflow)?;
    let n = k.checked_mul(k).ok_or(MlsaError::CountOverflow)?;
    Ok((BiasParam::new(k)?, n))
}

/// The real-valued schedule before ceiling (exposed for exactness tests):
/// `N_ℓ = h_L^{−2/β} (Σ_{ℓ′} h_{ℓ′}^{−(2β−1)/(2(1+β))})^{1/β} h_ℓ^{3/(2(1+β))}`.
pub(crate) fn raw_schedule(
    h0: BiasParam,
    m: u32,
    num_levels: u32,
    beta: f64,
) -> Result<Vec<f64>, MlsaError> {
    if !(beta > 0.5 && beta <= 1.0) {
        return Err(MlsaError::BadBeta(beta));
    }
    let mut hs = Vec::with_capacity(num_levels as usize + 1);
    for ell in 0..=num_levels {
        hs.push(level_bias(h0, m, ell)?.h());
    }
    let sum_exp = (2.0 * beta - 1.0) / (2.0 * (1.0 + beta));
    let iter_exp = 3.0 / (2.0 * (1.0 + beta));
    let s: f64 = hs.iter().map(|h| h.powf(-sum_exp)).sum();
    let scale = hs[num_levels as usize].powf(-2.0 / beta) * s.powf(1.0 / beta);
    Ok(hs.iter().map(|h| scale * h.powf(iter_exp)).collect())
}

/// Per-level iteration counts for the multilevel scheme with step exponent
/// `β`, each entry ceilinged after evaluating the real-valued formula.
pub fn schedule_mlsa(
    h0: BiasParam,
    m: u32,
    num_levels: u32,
    beta: f64,
) -> Result<Vec<u64>, MlsaError> {
    raw_schedule(h0, m, num_levels, beta)?
        .into_iter()
        .map(|x| ceil_int(x).ok_or(MlsaError::CountOverflow))
        .collect()
}

/// Per-level iteration counts for the averaged multilevel scheme:
/// `N_ℓ = h_L^{−2} (Σ_{ℓ′} h_{ℓ′}^{−1/4}) h_ℓ^{3/4}`, ceilinged. This is the
/// `β = 1` instance of the unaveraged formula, valid here for every step
/// exponent in `(1/2, 1)` because averaging restores the fast VaR time scale.
pub fn schedule_amlsa(h0: BiasParam, m: u32, num_levels: u32) -> Result<Vec<u64>, MlsaError> {
    schedule_mlsa(h0, m, num_levels, 1.0)
}

/// Total payoff evaluations a schedule will consume: `Σ_ℓ N_ℓ·K·M^ℓ`
/// (deterministic — the per-step cost of level `ℓ` is exactly `K·M^ℓ`).
pub fn schedule_cost(h0: BiasParam, m: u32, schedule: &[u64]) -> Result<u64, MlsaError> {
    let mut total = 0u64;
    for (ell, &n) in schedule.iter().enumerate() {
        let per_step = level_bias(h0, m, ell as u32)?.k();
        let level = n.checked_mul(per_step).ok_or(MlsaError::CountOverflow)?;
        total = total.checked_add(level).ok_or(MlsaError::CountOverflow)?;
    }
    Ok(total)
}

/// Configuration of one multilevel run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlConfig {
    /// Coarsest bias `h₀ = 1/K`.
    pub h0: BiasParam,
    /// Refinement factor `M ≥ 2`.
    pub m: u32,
    /// Number of refinement levels `L ≥ 0`; the bias ladder has `L+1` rungs.
    pub num_levels: u32,
    /// VaR step-size schedule, shared by every level.
    pub rate: LearningRate,
    /// Confidence level of the VaR/ES pair.
    pub alpha: Confidence,
    /// Iterations per level, `L+1` entries.
    pub schedule: Vec<u64>,
    /// `true` runs the averaged variant: the VaR parts of every level are
    /// read from the running averages `ξ̄` instead of the final iterates.
    pub averaged: bool,
    /// Initial VaR iterate for every chain at every level.
    #[serde(default)]
    pub xi0: f64,
}

impl MlConfig {
    /// Build a config carrying the theoretically optimal schedule for the
    /// given ladder: the averaged variant uses the `β`-free schedule, the
    /// plain variant the `β`-dependent one with `β` taken from `rate`.
    pub fn theoretical(
        h0: BiasParam,
        m: u32,
        num_levels: u32,
        rate: LearningRate,
        alpha: Confidence,
        averaged: bool,
    ) -> Result<Self, MlsaError> {
        let schedule = if averaged {
            schedule_amlsa(h0, m, num_levels)?
        } else {
            schedule_mlsa(h0, m, num_levels, rate.beta())?
        };
        let cfg = Self {
            h0,
            m,
            num_levels,
            rate,
            alpha,
            schedule,
            averaged,
            xi0: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MlsaError> {
        let expected = self.num_levels as usize + 1;
        if self.schedule.len() != expected {
            return Err(MlsaError::ScheduleLength {
                expected,
                got: self.schedule.len(),
            });
        }
        if self.schedule.contains(&0) {
            return Err(MlsaError::EmptyLevel);
        }
        // The refinement levels must not grow with ℓ (the coarsest level N₀
        // is unconstrained relative to N₁).
        if self.schedule.len() > 2 && self.schedule[1..].windows(2).any(|w| w[1] > w[0]) {
            return Err(MlsaError::IncreasingSchedule);
        }
        if self.m < 2 {
            return Err(SamplerError::BadRefinement(self.m).into());
        }
        if !self.xi0.is_finite() {
            return Err(MlsaError::BadInitial(self.xi0));
        }
        // Surface K·M^L overflow at validation time rather than mid-run.
        level_bias(self.h0, self.m, self.num_levels)?;
        Ok(())
    }
}

/// One level's contribution to the telescopic sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelIncrement {
    pub level: u32,
    /// Contribution to the VaR estimate (level 0: the estimate itself;
    /// higher levels: fine-chain minus coarse-chain).
    pub var_increment: f64,
    /// Contribution to the ES estimate.
    pub es_increment: f64,
    /// Recursion steps run at this level.
    pub n_steps: u64,
    /// Payoff evaluations consumed at this level.
    pub cost: u64,
}

/// Result of one multilevel (or, with `L = 0`, single-level) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    /// VaR estimate `ξ^ML`.
    pub var: f64,
    /// ES estimate `χ^ML`.
    pub es: f64,
    /// Total payoff evaluations, `Σ_ℓ N_ℓ·K·M^ℓ` exactly.
    pub cost: u64,
    /// Per-level diagnostics; increments sum to the estimates.
    pub per_level: Vec<LevelIncrement>,
}

/// Run the multilevel estimator.
///
/// Level 0 runs one recursion with bias `h₀` for `N₀` steps. Each level
/// `ℓ ≥ 1` runs a coarse and a fine chain in lockstep for `N_ℓ` steps, both
/// fed from the same coupled draw per step (coarse chain the `h_{ℓ−1}` leg,
/// fine chain the `h_ℓ` leg), and contributes the difference of the final
/// states. Level `ℓ` consumes its own derived random stream, offset `ℓ` from
/// `rng`'s stream, so results do not depend on `rng`'s consumption position
/// and levels are mutually independent.
pub fn run_mlsa<M: LossModel>(
    model: &M,
    cfg: &MlConfig,
    rng: &StreamRng,
) -> Result<RiskEstimate, MlsaError> {
    cfg.validate()?;
    let mut per_level = Vec::with_capacity(cfg.schedule.len());
    let mut var = 0.0;
    let mut es = 0.0;
    let mut cost = 0u64;

    let mut source = BiasedSource::new(model, cfg.h0, level_rng(rng, 0));
    let state = run_scheme(&mut source, cfg.schedule[0], &cfg.rate, cfg.alpha, cfg.xi0)?;
    let v0 = if cfg.averaged { state.xi_bar } else { state.xi };
    var += v0;
    es += state.chi;
    cost += state.cost;
    per_level.push(LevelIncrement {
        level: 0,
        var_increment: v0,
        es_increment: state.chi,
        n_steps: cfg.schedule[0],
        cost: state.cost,
    });

    for ell in 1..=cfg.num_levels {
        let n_steps = cfg.schedule[ell as usize];
        let mut level_stream = level_rng(rng, ell);
        let mut coarse = SaState::new(cfg.xi0);
        let mut fine = SaState::new(cfg.xi0);
        let mut level_cost = 0u64;
        for _ in 0..n_steps {
            let draw = sample_coupled(model, cfg.h0, cfg.m, ell, &mut level_stream)?;
            coarse = nsa_step(coarse, draw.coarse, &cfg.rate, cfg.alpha);
            fine = nsa_step(fine, draw.fine, &cfg.rate, cfg.alpha);
            level_cost += draw.cost;
        }
        let dv = if cfg.averaged {
            fine.xi_bar - coarse.xi_bar
        } else {
            fine.xi - coarse.xi
        };
        let de = fine.chi - coarse.chi;
        var += dv;
        es += de;
        cost += level_cost;
        per_level.push(LevelIncrement {
            level: ell,
            var_increment: dv,
            es_increment: de,
            n_steps,
            cost: level_cost,
        });
    }

    Ok(RiskEstimate {
        var,
        es,
        cost,
        per_level,
    })
}
