//! Stochastic-approximation estimators of Value-at-Risk (VaR) and Expected
//! Shortfall (ES) for losses that are conditional expectations, `X₀ = E[φ(Y,Z)|Y]`,
//! simulated by nested Monte Carlo.
//!
//! The crate provides four estimation schemes built on a two-time-scale
//! Robbins-Monro kernel:
//!
//! * **NSA** — nested stochastic approximation on the biased loss `X_h`
//!   (inner-sample mean over `K = 1/h` payoff draws),
//! * **ANSA** — NSA with Polyak-Ruppert averaging of the VaR iterates,
//! * **MLSA** — multilevel NSA combining telescoped level corrections driven by
//!   perfectly-correlated coarse/fine loss pairs,
//! * **AMLSA** — MLSA with per-level Polyak-Ruppert averaging of the VaR parts,
//!
//! together with
//!
//! * a financial case study ([`swap`]): an at-par interest-rate swap under a
//!   Bachelier rate model, whose loss admits exact simulation and closed-form
//!   VaR/ES,
//! * evaluators of the asymptotic covariance matrices of the four central limit
//!   theorems and the Monte Carlo estimators of their unknown entries
//!   ([`theory`]),
//! * a replication harness ([`harness`]) that renormalizes estimation errors
//!   with the scheme-specific CLT scaling, fits bivariate Gaussians, and
//!   produces 95% confidence-ellipse geometry,
//! * deterministic cost models and accuracy-to-parameter maps ([`mlsa`]).
//!
//! All randomness flows through explicitly-seeded counter-based streams
//! ([`streams`]) so every run is bitwise reproducible regardless of thread
//! scheduling.

// Reference constants (quantile-function coefficients, closed-form oracle
// values in tests) keep every digit of their source tables, even where fewer
// would round-trip through f64.
#![allow(clippy::excessive_precision)]

pub mod harness;
pub mod mlsa;
pub mod normal;
pub mod rate;
pub mod sa;
pub mod sampler;
pub mod streams;
pub mod swap;
pub mod theory;

pub use harness::{
    ellipse_95, fit_gaussian, normality_report, protocol_reference, run_replications, Ellipse,
    GaussianFit, HarnessError, MarginalStats, NormalityReport, RawReplication, Replications,
    SchemeRun, ScalingSpec, CHI2_2_Q95,
};
pub use mlsa::{
    level_bias, levels_for_accuracy, nsa_params_for_accuracy, run_mlsa, schedule_amlsa,
    schedule_cost, schedule_mlsa, LevelIncrement, MlConfig, MlsaError, RiskEstimate,
};
pub use rate::{LearningRate, RateError, RateSpec};
pub use sa::{
    h1, h2, nsa_step, run_scheme, run_scheme_observed, Confidence, ConfidenceError,
    InnovationSource, SaError, SaState,
};
pub use sampler::{
    sample_biased, sample_coupled, coupling_diagnostic, BiasParam, BiasParamError, BiasedSource,
    CoupledDraw, CountingModel, ExactSource, LossModel, SamplerError,
};
pub use streams::{master_rng, replication_stream, rng_for_stream, StreamRng};
pub use swap::{
    analytic_var_es, as_loss_model, derive, par_strike, SwapDerived, SwapError, SwapModel,
    SwapParams,
};
pub use theory::{
    bias_limit, mc_g_quantities, mc_var_pos_part, sigma_amlsa, sigma_ansa, sigma_mlsa, sigma_nsa,
    swap_quantities, Cov2, ModelQuantities, QuantitiesReport, TheoryError,
};
