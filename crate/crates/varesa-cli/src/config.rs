//! Run configuration: the JSON schema accepted by every subcommand, its
//! validation rules, and its resolution into concrete scheme parameters.
//!
//! A configuration is a single JSON document. Unknown fields are rejected so
//! typos fail loudly. The same document drives `analytic`, `estimate`,
//! `clt-study`, and `complexity`; each command reads the subset it needs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use varesa::mlsa::MlsaError;
use varesa::rate::RateError;
use varesa::sampler::SamplerError;
use varesa::swap::SwapError;
use varesa::{
    level_bias, nsa_params_for_accuracy, BiasParam, Confidence, LearningRate, MlConfig, RateSpec,
    SchemeRun, ScalingSpec, SwapModel, SwapParams,
};

/// Name of the built-in benchmark preset.
pub const PRESET_SWAP: &str = "paper-swap";

/// Default target accuracy of the preset, `ε = 1/256`.
pub const PRESET_EPSILON: f64 = 1.0 / 256.0;

/// Default accuracy grid for complexity sweeps.
pub const DEFAULT_EPSILONS: [f64; 5] = [
    1.0 / 16.0,
    1.0 / 32.0,
    1.0 / 64.0,
    1.0 / 128.0,
    1.0 / 256.0,
];

/// Configuration loading/validation failures.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown preset {0:?} (available: {PRESET_SWAP:?})")]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("learning rate: {0}")]
    Rate(#[from] RateError),
    #[error("model: {0}")]
    Swap(#[from] SwapError),
    #[error("bias parameter: {0}")]
    Sampler(#[from] SamplerError),
    #[error("multilevel sizing: {0}")]
    Mlsa(#[from] MlsaError),
}

/// Estimation scheme selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Plain two-time-scale recursion on exact losses.
    Sa,
    /// Averaged recursion on exact losses.
    Asa,
    /// Nested recursion on inner-sample-mean losses at a fixed bias.
    Nsa,
    /// Nested recursion with Polyak-Ruppert averaging of the VaR iterates.
    Ansa,
    /// Multilevel nested recursion over a geometric bias ladder.
    Mlsa,
    /// Multilevel recursion with per-level averaging of the VaR parts.
    Amlsa,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Sa => "sa",
            Scheme::Asa => "asa",
            Scheme::Nsa => "nsa",
            Scheme::Ansa => "ansa",
            Scheme::Mlsa => "mlsa",
            Scheme::Amlsa => "amlsa",
        }
    }

    /// Whether the VaR output reads the Polyak-Ruppert average.
    pub fn is_averaged(self) -> bool {
        matches!(self, Scheme::Asa | Scheme::Ansa | Scheme::Amlsa)
    }

    pub fn is_multilevel(self) -> bool {
        matches!(self, Scheme::Mlsa | Scheme::Amlsa)
    }

    pub fn is_exact(self) -> bool {
        matches!(self, Scheme::Sa | Scheme::Asa)
    }

    /// Step-exponent window `(lo, hi]`/`(lo, hi)` required by the scheme's
    /// central limit theorem.
    fn beta_window(self) -> (f64, bool, f64, bool) {
        match self {
            // (1/2, 1]
            Scheme::Sa | Scheme::Nsa | Scheme::Mlsa => (0.5, false, 1.0, true),
            // (1/2, 1): averaging requires a sub-linear schedule.
            Scheme::Asa | Scheme::Ansa => (0.5, false, 1.0, false),
            // (8/9, 1): the stricter window of the averaged multilevel CLT.
            Scheme::Amlsa => (8.0 / 9.0, false, 1.0, false),
        }
    }

    fn check_beta(self, beta: f64) -> Result<(), ConfigError> {
        let (lo, lo_closed, hi, hi_closed) = self.beta_window();
        let lo_ok = if lo_closed { beta >= lo } else { beta > lo };
        let hi_ok = if hi_closed { beta <= hi } else { beta < hi };
        if lo_ok && hi_ok {
            Ok(())
        } else {
            let lb = if lo_closed { '[' } else { '(' };
            let rb = if hi_closed { ']' } else { ')' };
            Err(ConfigError::Invalid(format!(
                "scheme {} requires beta in {lb}{lo}, {hi}{rb}, got {beta}",
                self.name()
            )))
        }
    }
}

/// Loss model selection: a named preset or explicit swap parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Built-in parameter set (currently `"paper-swap"`).
    Preset(String),
    /// Fully explicit swap parameters.
    Params(SwapParams),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Preset(PRESET_SWAP.to_owned())
    }
}

impl ModelSpec {
    pub fn resolve(&self) -> Result<SwapParams, ConfigError> {
        match self {
            ModelSpec::Preset(name) if name == PRESET_SWAP => Ok(SwapParams::paper_swap()),
            ModelSpec::Preset(name) => Err(ConfigError::UnknownPreset(name.clone())),
            ModelSpec::Params(p) => Ok(p.clone()),
        }
    }
}

/// Accuracy specification. Exactly one entry point per scheme family:
///
/// * exact schemes (`sa`, `asa`): `epsilon` (step count `⌈ε⁻¹⌉²`) or a
///   top-level `n_steps` override;
/// * nested schemes (`nsa`, `ansa`): `epsilon` (bias and step count from the
///   scheme's optimal tuning) or an explicit bias `h`;
/// * multilevel schemes (`mlsa`, `amlsa`): `epsilon` (coarsest bias
///   `h₀ = ε·Mᴸ`, so the finest level lands exactly on `ε`) or an explicit
///   `h0`, with `m`/`levels` defaulting to 2/3.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Accuracy {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<u32>,
}

impl Accuracy {
    fn epsilon_only(epsilon: f64) -> Self {
        Accuracy {
            epsilon: Some(epsilon),
            ..Accuracy::default()
        }
    }

    fn multilevel(epsilon: f64, m: u32, levels: u32) -> Self {
        Accuracy {
            epsilon: Some(epsilon),
            m: Some(m),
            levels: Some(levels),
            ..Accuracy::default()
        }
    }

    fn check_unused(&self, scheme: Scheme) -> Result<(), ConfigError> {
        let reject = |field: &str| {
            Err(ConfigError::Invalid(format!(
                "accuracy.{field} does not apply to scheme {}",
                scheme.name()
            )))
        };
        if !scheme.is_multilevel() {
            if self.h0.is_some() {
                return reject("h0");
            }
            if self.m.is_some() {
                return reject("m");
            }
            if self.levels.is_some() {
                return reject("levels");
            }
        }
        if scheme.is_exact() && self.h.is_some() {
            return reject("h");
        }
        if scheme.is_multilevel() && self.h.is_some() {
            return reject("h (use h0 for the coarsest level)");
        }
        Ok(())
    }
}

fn default_protocol_gamma1() -> f64 {
    0.17
}
fn default_protocol_beta() -> f64 {
    0.9
}
fn default_protocol_h() -> f64 {
    1.0 / 256.0
}
fn default_protocol_n_steps() -> u64 {
    100_000
}
fn default_protocol_outcomes() -> u64 {
    200
}

/// How the renormalization target `(ξ_ref, χ_ref)` is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    /// Closed-form stationary pair of the finest simulated law: the exact
    /// pair for `sa`/`asa`, the bias-`h` pair for `nsa`/`ansa`, and the
    /// bias-`h_L` pair for the multilevel schemes.
    #[default]
    Analytic,
    /// Caller-supplied pair.
    Fixed { xi: f64, chi: f64 },
    /// Pilot estimate: average the final iterates of `outcomes` independent
    /// nested runs at bias `h` (cold start, plain schedule `γ₁ n^{-β}`).
    Protocol {
        #[serde(default = "default_protocol_gamma1")]
        gamma1: f64,
        #[serde(default = "default_protocol_beta")]
        beta: f64,
        #[serde(default = "default_protocol_h")]
        h: f64,
        #[serde(default = "default_protocol_n_steps")]
        n_steps: u64,
        #[serde(default = "default_protocol_outcomes")]
        outcomes: u64,
    },
}

fn default_replications() -> u64 {
    5000
}
fn default_seed() -> u64 {
    20260816
}

/// One batch run: model, scheme, sizing, schedule, replication plan, output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSpec,
    pub scheme: Scheme,
    #[serde(default)]
    pub accuracy: Accuracy,
    pub rate: RateSpec,
    /// Replication count for `clt-study`.
    #[serde(default = "default_replications")]
    pub replications: u64,
    /// Master seed; every replication and level derives its own stream.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads (0 = one per core).
    #[serde(default)]
    pub workers: usize,
    /// Initial VaR iterate `ξ₀`.
    #[serde(default)]
    pub xi0: f64,
    /// Explicit step count for single-level schemes (overrides the
    /// accuracy-derived count).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<u64>,
    #[serde(default)]
    pub reference: Reference,
    /// Output directory (`clt-study` requires one; other commands print to
    /// stdout and mirror into it when present).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Accuracy grid for `complexity` (defaults to 1/16 … 1/256).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilons: Vec<f64>,
}

impl RunConfig {
    /// Load a config from a JSON file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The built-in benchmark configuration for one scheme: at-par swap
    /// model, `ε = 1/256`, `h₀ = 1/32`, `M = 2`, `L = 3`, `β = 0.9`, and the
    /// scheme's published step schedule (`γ_n = 1·n^{-0.9}` exact,
    /// `0.1·(250+n)^{-0.9}` nested, `0.1·(1500+n)^{-0.9}` multilevel),
    /// 5000 replications.
    pub fn preset(scheme: Scheme) -> Self {
        let rate = match scheme {
            Scheme::Sa | Scheme::Asa => RateSpec {
                gamma1: 1.0,
                beta: 0.9,
                offset: 0,
            },
            Scheme::Nsa | Scheme::Ansa => RateSpec {
                gamma1: 0.1,
                beta: 0.9,
                offset: 250,
            },
            Scheme::Mlsa | Scheme::Amlsa => RateSpec {
                gamma1: 0.1,
                beta: 0.9,
                offset: 1500,
            },
        };
        let accuracy = if scheme.is_multilevel() {
            Accuracy::multilevel(PRESET_EPSILON, 2, 3)
        } else {
            Accuracy::epsilon_only(PRESET_EPSILON)
        };
        RunConfig {
            model: ModelSpec::default(),
            scheme,
            accuracy,
            rate,
            replications: default_replications(),
            seed: default_seed(),
            workers: 0,
            xi0: 0.0,
            n_steps: None,
            reference: Reference::Analytic,
            out: None,
            epsilons: DEFAULT_EPSILONS.to_vec(),
        }
    }

    /// Validate and resolve into concrete run parameters.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let params = self.model.resolve()?;
        let model = SwapModel::new(params.clone())?;
        let alpha = model.alpha();
        let rate: LearningRate = self.rate.try_into()?;
        self.scheme.check_beta(rate.beta())?;
        self.accuracy.check_unused(self.scheme)?;
        let beta = rate.beta();
        let averaged = self.scheme.is_averaged();

        let pick_epsilon = || -> Result<f64, ConfigError> {
            let eps = self.accuracy.epsilon.ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "scheme {} needs accuracy.epsilon{}",
                    self.scheme.name(),
                    match self.scheme {
                        Scheme::Sa | Scheme::Asa => " or n_steps",
                        Scheme::Nsa | Scheme::Ansa => " or accuracy.h",
                        Scheme::Mlsa | Scheme::Amlsa => " or accuracy.h0",
                    }
                ))
            })?;
            if eps > 0.0 && eps < 1.0 {
                Ok(eps)
            } else {
                Err(ConfigError::Invalid(format!(
                    "accuracy.epsilon must lie in (0, 1), got {eps}"
                )))
            }
        };

        let (run, scaling, bias, ml) = match self.scheme {
            Scheme::Sa | Scheme::Asa => {
                if self.accuracy.epsilon.is_some() && self.n_steps.is_some() {
                    return Err(ConfigError::Invalid(
                        "give accuracy.epsilon or n_steps, not both".into(),
                    ));
                }
                let n_steps = match self.n_steps {
                    Some(n) if n > 0 => n,
                    Some(n) => {
                        return Err(ConfigError::Invalid(format!(
                            "n_steps must be positive, got {n}"
                        )))
                    }
                    // ⌈ε⁻¹⌉² steps: the n^{-1/2} CLT scale reaches ε.
                    None => nsa_params_for_accuracy(pick_epsilon()?, 1.0)?.1,
                };
                let run = SchemeRun::Exact {
                    n_steps,
                    rate,
                    averaged,
                };
                let base = (n_steps as f64).powf(-0.5);
                let scaling = if averaged {
                    ScalingSpec::ansa(base)
                } else {
                    ScalingSpec::nsa(base, beta)
                };
                (run, scaling, None, None)
            }
            Scheme::Nsa | Scheme::Ansa => {
                let (bias, auto_n) = match (self.accuracy.epsilon, self.accuracy.h) {
                    (Some(_), Some(_)) => {
                        return Err(ConfigError::Invalid(
                            "give accuracy.epsilon or accuracy.h, not both".into(),
                        ))
                    }
                    (Some(_), None) => {
                        // The averaged scheme sizes like the β = 1 optimum;
                        // the plain scheme pays the β-dependent inner count.
                        let sizing_beta = if averaged { 1.0 } else { beta };
                        nsa_params_for_accuracy(pick_epsilon()?, sizing_beta)?
                    }
                    (None, Some(h)) => {
                        let bias = BiasParam::from_h(h)?;
                        (bias, bias.k().saturating_mul(bias.k()))
                    }
                    (None, None) => {
                        return Err(ConfigError::Invalid(format!(
                            "scheme {} needs accuracy.epsilon or accuracy.h",
                            self.scheme.name()
                        )))
                    }
                };
                let n_steps = match self.n_steps {
                    Some(n) if n > 0 => n,
                    Some(n) => {
                        return Err(ConfigError::Invalid(format!(
                            "n_steps must be positive, got {n}"
                        )))
                    }
                    None => auto_n,
                };
                let run = SchemeRun::Biased {
                    bias,
                    n_steps,
                    rate,
                    averaged,
                };
                let scaling = if averaged {
                    ScalingSpec::ansa(bias.h())
                } else {
                    ScalingSpec::nsa(bias.h(), beta)
                };
                (run, scaling, Some(bias), None)
            }
            Scheme::Mlsa | Scheme::Amlsa => {
                if self.n_steps.is_some() {
                    return Err(ConfigError::Invalid(
                        "n_steps does not apply to multilevel schemes; the per-level \
                         schedule is derived from (h0, m, levels, beta)"
                            .into(),
                    ));
                }
                let m = self.accuracy.m.unwrap_or(2);
                let levels = self.accuracy.levels.unwrap_or(3);
                let h0 = match (self.accuracy.epsilon, self.accuracy.h0) {
                    (Some(_), Some(_)) => {
                        return Err(ConfigError::Invalid(
                            "give accuracy.epsilon or accuracy.h0, not both".into(),
                        ))
                    }
                    // Fixed level count: the grid scales so h_L = ε exactly.
                    (Some(_), None) => {
                        let eps = pick_epsilon()?;
                        BiasParam::from_h(eps * f64::from(m).powi(levels as i32))?
                    }
                    (None, Some(h0)) => BiasParam::from_h(h0)?,
                    (None, None) => {
                        return Err(ConfigError::Invalid(format!(
                            "scheme {} needs accuracy.epsilon or accuracy.h0",
                            self.scheme.name()
                        )))
                    }
                };
                let config = MlConfig::theoretical(h0, m, levels, rate, alpha, averaged)?;
                let h_l = level_bias(h0, m, levels)?.h();
                let scaling = if averaged {
                    ScalingSpec::amlsa(h_l)
                } else {
                    ScalingSpec::mlsa(h_l, beta)
                };
                (
                    SchemeRun::Multilevel {
                        config: config.clone(),
                    },
                    scaling,
                    Some(level_bias(h0, m, levels)?),
                    Some(config),
                )
            }
        };

        if self.replications == 0 {
            return Err(ConfigError::Invalid("replications must be positive".into()));
        }
        Ok(Resolved {
            params,
            model,
            alpha,
            rate,
            run,
            scaling,
            finest_bias: bias,
            ml,
        })
    }
}

/// A validated configuration resolved to concrete run parameters.
pub struct Resolved {
    pub params: SwapParams,
    pub model: SwapModel,
    pub alpha: Confidence,
    pub rate: LearningRate,
    /// The per-replication run the harness executes.
    pub run: SchemeRun,
    /// CLT renormalization for this scheme and sizing.
    pub scaling: ScalingSpec,
    /// Finest simulated bias (`None` for exact schemes).
    pub finest_bias: Option<BiasParam>,
    /// Multilevel configuration when the scheme is multilevel.
    pub ml: Option<MlConfig>,
}

impl Resolved {
    /// Step count of a single-level run, or the total multilevel schedule.
    pub fn total_steps(&self) -> u64 {
        match &self.run {
            SchemeRun::Exact { n_steps, .. } | SchemeRun::Biased { n_steps, .. } => *n_steps,
            SchemeRun::Multilevel { config } => config.schedule.iter().sum(),
        }
    }
}
