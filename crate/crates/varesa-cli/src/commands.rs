//! Subcommand implementations: analytic benchmarks, single estimates,
//! replicated CLT studies, and deterministic complexity sweeps.
//!
//! Every command is a plain function from a validated [`RunConfig`] to a
//! serializable report, so integration tests exercise them without spawning
//! the binary. File output (CSV/JSON) is layered on top.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use varesa::harness::HarnessError;
use varesa::mlsa::MlsaError;
use varesa::rate::RateError;
use varesa::sa::SaError;
use varesa::sampler::SamplerError;
use varesa::swap::SwapError;
use varesa::theory::TheoryError;
use varesa::{
    ellipse_95, fit_gaussian, level_bias, mc_g_quantities, mc_var_pos_part, normality_report,
    nsa_params_for_accuracy, protocol_reference, replication_stream, rng_for_stream,
    run_replications, run_scheme_observed, schedule_amlsa, schedule_cost, schedule_mlsa,
    sigma_amlsa, sigma_ansa, sigma_mlsa, sigma_nsa, swap_quantities, BiasParam, BiasedSource,
    Cov2, Ellipse, ExactSource, GaussianFit, LearningRate, LevelIncrement, NormalityReport,
    QuantitiesReport, Replications, RiskEstimate, SchemeRun, SwapModel,
};
use varesa::streams::level_rng;

use crate::config::{ConfigError, Reference, Resolved, RunConfig, Scheme, DEFAULT_EPSILONS};

/// Seed-domain separator for reference-protocol pilots, so their streams
/// never collide with study replications under the same master seed.
const PROTOCOL_SEED_DOMAIN: u64 = 0x70726f746f636f6c; // "protocol"

/// Failure of any subcommand.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model: {0}")]
    Swap(#[from] SwapError),
    #[error("sampler: {0}")]
    Sampler(#[from] SamplerError),
    #[error("rate: {0}")]
    Rate(#[from] RateError),
    #[error("recursion: {0}")]
    Sa(#[from] SaError),
    #[error("multilevel: {0}")]
    Mlsa(#[from] MlsaError),
    #[error("theory: {0}")]
    Theory(#[from] TheoryError),
    #[error("harness: {0}")]
    Harness(#[from] HarnessError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// Stable machine-readable error category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Swap(_) => "model",
            CliError::Sampler(_) => "sampler",
            CliError::Rate(_) => "rate",
            CliError::Sa(_) => "recursion",
            CliError::Mlsa(_) => "multilevel",
            CliError::Theory(_) => "theory",
            CliError::Harness(_) => "harness",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
            CliError::Csv(_) => "csv",
            CliError::Other(_) => "other",
        }
    }
}

// ---------------------------------------------------------------------------
// analytic
// ---------------------------------------------------------------------------

/// Closed-form benchmarks of the configured model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReport {
    /// Exact VaR `ξ⋆`.
    pub xi_star: f64,
    /// Exact ES `χ⋆`.
    pub chi_star: f64,
    /// Outer (risk-horizon) standard deviation `η`.
    pub eta: f64,
    /// Par strike.
    pub strike: f64,
    /// Nominal pinned by the inception value.
    pub nominal: f64,
    /// Inner conditional variance coefficient `s²`.
    pub s2_inner: f64,
    /// Every covariance-formula ingredient with its derivation tag.
    pub quantities: QuantitiesReport,
}

/// Evaluate the closed-form VaR/ES pair and all covariance ingredients.
pub fn cmd_analytic(cfg: &RunConfig) -> Result<AnalyticReport, CliError> {
    let params = cfg.model.resolve()?;
    let model = SwapModel::new(params.clone())?;
    let (xi_star, chi_star) = model.analytic_var_es();
    let d = model.derived();
    // Quantities are reported in the coarsest-bias context the accuracy
    // block implies; the benchmark grid (h₀ = 1/32, M = 2) is the default.
    let h0 = match (cfg.accuracy.h0, cfg.accuracy.h, cfg.accuracy.epsilon) {
        (Some(h0), _, _) => BiasParam::from_h(h0)?,
        (None, Some(h), _) => BiasParam::from_h(h)?,
        (None, None, Some(eps)) if cfg.scheme.is_multilevel() => {
            let m = cfg.accuracy.m.unwrap_or(2);
            let l = cfg.accuracy.levels.unwrap_or(3);
            BiasParam::from_h(eps * f64::from(m).powi(l as i32))?
        }
        _ => BiasParam::from_h(1.0 / 32.0)?,
    };
    let m = cfg.accuracy.m.unwrap_or(2);
    let quantities = swap_quantities(&params, h0, m)?;
    Ok(AnalyticReport {
        xi_star,
        chi_star,
        eta: d.eta,
        strike: d.strike,
        nominal: d.nominal,
        s2_inner: d.s2_inner,
        quantities,
    })
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

/// One estimation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub scheme: Scheme,
    /// VaR estimate.
    pub var: f64,
    /// ES estimate.
    pub es: f64,
    /// Total payoff evaluations.
    pub cost: u64,
    pub seed: u64,
    /// Total recursion steps (all levels).
    pub n_steps: u64,
    /// Finest simulated bias, when the scheme is nested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Per-level schedule, when the scheme is multilevel.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<u64>>,
    /// Per-level increments, when the scheme is multilevel.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_level: Option<Vec<LevelIncrement>>,
}

/// Run the configured scheme once (replication stream 0).
pub fn cmd_estimate(cfg: &RunConfig) -> Result<EstimateReport, CliError> {
    let resolved = cfg.resolve()?;
    let rng = rng_for_stream(cfg.seed, replication_stream(0));
    let (var, es, cost, per_level) = match &resolved.run {
        SchemeRun::Multilevel { config } => {
            let mut ml = config.clone();
            ml.xi0 = cfg.xi0;
            let RiskEstimate {
                var,
                es,
                cost,
                per_level,
            } = varesa::run_mlsa(&resolved.model, &ml, &rng)?;
            (var, es, cost, Some(per_level))
        }
        run => {
            let raw = run.execute(&resolved.model, resolved.alpha, cfg.xi0, rng)?;
            (raw.var, raw.es, raw.cost, None)
        }
    };
    Ok(EstimateReport {
        scheme: cfg.scheme,
        var,
        es,
        cost,
        seed: cfg.seed,
        n_steps: resolved.total_steps(),
        h: resolved.finest_bias.map(|b| b.h()),
        schedule: resolved.ml.as_ref().map(|c| c.schedule.clone()),
        per_level,
    })
}

// ---------------------------------------------------------------------------
// clt-study
// ---------------------------------------------------------------------------

/// Fitted ES variance against its theoretical value, with the unknown theory
/// ingredients estimated by simulation alongside the study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsVarianceComparison {
    /// ES diagonal of the fitted covariance.
    pub fitted: f64,
    /// Theoretical ES variance with simulation-estimated ingredients.
    pub mc_theory: f64,
    /// Fully closed-form theoretical ES variance, when evaluable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic_theory: Option<f64>,
    /// `fitted / mc_theory`.
    pub ratio: f64,
}

/// Study-level summary written to `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltSummary {
    pub scheme: Scheme,
    pub replications: u64,
    pub seed: u64,
    /// Renormalization target `(ξ_ref, χ_ref)`.
    pub target: [f64; 2],
    /// Renormalization factors applied to (VaR, ES) errors.
    pub scaling: [f64; 2],
    /// Mean payoff evaluations per replication.
    pub mean_cost: f64,
    pub fit: GaussianFit,
    pub ellipse: Ellipse,
    pub normality: NormalityReport,
    /// Closed-form asymptotic covariance, when evaluable for this schedule.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theory: Option<Cov2>,
    /// Why `theory` is absent, when it is.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theory_note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub es_variance: Option<EsVarianceComparison>,
}

/// Renormalization target per the configured reference mode.
pub fn resolve_target(cfg: &RunConfig, resolved: &Resolved) -> Result<(f64, f64), CliError> {
    match cfg.reference {
        Reference::Analytic => Ok(match resolved.finest_bias {
            None => resolved.model.analytic_var_es(),
            Some(b) => resolved.model.biased_var_es(b.h()),
        }),
        Reference::Fixed { xi, chi } => Ok((xi, chi)),
        Reference::Protocol {
            gamma1,
            beta,
            h,
            n_steps,
            outcomes,
        } => {
            let rate = LearningRate::new(gamma1, beta, 0)?;
            let bias = BiasParam::from_h(h)?;
            Ok(protocol_reference(
                &resolved.model,
                bias,
                &rate,
                resolved.alpha,
                n_steps,
                outcomes,
                cfg.seed ^ PROTOCOL_SEED_DOMAIN,
                cfg.workers,
            )?)
        }
    }
}

/// Closed-form asymptotic covariance for the resolved scheme, or the reason
/// it cannot be evaluated (e.g. a `β = 1` schedule below the stability
/// threshold).
fn analytic_theory(cfg: &RunConfig, resolved: &Resolved) -> (Option<Cov2>, Option<String>) {
    let (h0, m) = match &resolved.ml {
        Some(ml) => (ml.h0, ml.m),
        None => (
            resolved
                .finest_bias
                .unwrap_or_else(|| BiasParam::from_h(1.0 / 32.0).expect("1/32 is reciprocal")),
            2,
        ),
    };
    let q = match swap_quantities(&resolved.params, h0, m) {
        Ok(q) => q,
        Err(e) => return (None, Some(e.to_string())),
    };
    let beta = resolved.rate.beta();
    let gamma1 = resolved.rate.gamma1();
    let sigma = match cfg.scheme {
        Scheme::Sa | Scheme::Nsa => sigma_nsa(beta, gamma1, &q.quantities, resolved.alpha),
        Scheme::Asa | Scheme::Ansa => sigma_ansa(&q.quantities, resolved.alpha),
        Scheme::Mlsa => sigma_mlsa(beta, gamma1, h0, m, &q.quantities, resolved.alpha),
        Scheme::Amlsa => sigma_amlsa(h0, m, &q.quantities, resolved.alpha),
    };
    match sigma {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

/// Theoretical ES variance with its unknown ingredients replaced by
/// simulation estimates along a dedicated trajectory of the same
/// configuration (stream index `replications`, i.e. the first unused one).
fn mc_es_theory(cfg: &RunConfig, resolved: &Resolved) -> Result<f64, CliError> {
    let tail = resolved.alpha.tail();
    let base = rng_for_stream(cfg.seed, replication_stream(cfg.replications));
    match &resolved.run {
        SchemeRun::Exact { n_steps, rate, .. } => {
            let mut pairs = Vec::with_capacity(*n_steps as usize);
            let mut source = ExactSource::new(&resolved.model, level_rng(&base, 0))?;
            run_scheme_observed(
                &mut source,
                *n_steps,
                rate,
                resolved.alpha,
                cfg.xi0,
                |state, x| pairs.push((state.xi, x)),
            )?;
            Ok(mc_var_pos_part(&pairs, resolved.alpha)? / (tail * tail))
        }
        SchemeRun::Biased {
            bias,
            n_steps,
            rate,
            ..
        } => {
            let mut pairs = Vec::with_capacity(*n_steps as usize);
            let mut source = BiasedSource::new(&resolved.model, *bias, level_rng(&base, 0));
            run_scheme_observed(
                &mut source,
                *n_steps,
                rate,
                resolved.alpha,
                cfg.xi0,
                |state, x| pairs.push((state.xi, x)),
            )?;
            Ok(mc_var_pos_part(&pairs, resolved.alpha)? / (tail * tail))
        }
        SchemeRun::Multilevel { config } => {
            // Level-0 chain estimates Var((X_{h₀} − ξ^{h₀}⋆)⁺); the finest
            // chain estimates Var(1_{X₀>ξ⋆}G). Both reuse the study's own
            // schedule lengths and rate.
            let mut pairs = Vec::with_capacity(config.schedule[0] as usize);
            let mut source = BiasedSource::new(&resolved.model, config.h0, level_rng(&base, 0));
            run_scheme_observed(
                &mut source,
                config.schedule[0],
                &config.rate,
                resolved.alpha,
                cfg.xi0,
                |state, x| pairs.push((state.xi, x)),
            )?;
            let var_pos_h0 = mc_var_pos_part(&pairs, resolved.alpha)?;

            let bias_l = level_bias(config.h0, config.m, config.num_levels)?;
            let n_l = *config.schedule.last().expect("schedule is non-empty");
            let mut rng_l = level_rng(&base, config.num_levels);
            let (var_indg, _g_scale) = mc_g_quantities(
                &resolved.model,
                bias_l,
                config.m,
                &config.rate,
                resolved.alpha,
                n_l,
                &mut rng_l,
            )?;

            let analytic = swap_quantities(&resolved.params, config.h0, config.m)?;
            let mut q = analytic.quantities;
            q.var_pos_part_h0 = var_pos_h0;
            q.var_indg = var_indg;
            let sigma = if config.averaged {
                sigma_amlsa(config.h0, config.m, &q, resolved.alpha)?
            } else {
                sigma_mlsa(
                    config.rate.beta(),
                    config.rate.gamma1(),
                    config.h0,
                    config.m,
                    &q,
                    resolved.alpha,
                )?
            };
            Ok(sigma.yy)
        }
    }
}

/// Run the replication study and assemble its summary.
pub fn cmd_clt_study(cfg: &RunConfig) -> Result<(CltSummary, Replications), CliError> {
    let resolved = cfg.resolve()?;
    let target = resolve_target(cfg, &resolved)?;
    let reps = run_replications(
        &resolved.model,
        &resolved.run,
        resolved.alpha,
        cfg.xi0,
        target,
        &resolved.scaling,
        cfg.replications,
        cfg.seed,
        cfg.workers,
    )?;
    let fit = fit_gaussian(&reps.renorm)?;
    let ellipse = ellipse_95(&fit)?;
    let normality = normality_report(&reps.renorm)?;
    let (theory, theory_note) = analytic_theory(cfg, &resolved);
    let es_variance = match mc_es_theory(cfg, &resolved) {
        Ok(mc_theory) if mc_theory > 0.0 => Some(EsVarianceComparison {
            fitted: fit.sigma.yy,
            mc_theory,
            analytic_theory: theory.map(|t| t.yy),
            ratio: fit.sigma.yy / mc_theory,
        }),
        _ => None,
    };
    let mean_cost =
        reps.raw.iter().map(|r| r.cost as f64).sum::<f64>() / reps.raw.len().max(1) as f64;
    let summary = CltSummary {
        scheme: cfg.scheme,
        replications: cfg.replications,
        seed: cfg.seed,
        target: [target.0, target.1],
        scaling: resolved.scaling.factors(),
        mean_cost,
        fit,
        ellipse,
        normality,
        theory,
        theory_note,
        es_variance,
    };
    Ok((summary, reps))
}

/// Write the study artifacts: `config.json`, `replications.csv`,
/// `summary.json`.
pub fn write_study(
    dir: &Path,
    cfg: &RunConfig,
    summary: &CltSummary,
    reps: &Replications,
) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(cfg)? + "\n",
    )?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(summary)? + "\n",
    )?;
    let mut w = csv::Writer::from_path(dir.join("replications.csv"))?;
    w.write_record([
        "replication",
        "var",
        "es",
        "cost",
        "renorm_var",
        "renorm_es",
    ])?;
    for (i, (raw, rn)) in reps.raw.iter().zip(&reps.renorm).enumerate() {
        w.write_record([
            i.to_string(),
            raw.var.to_string(),
            raw.es.to_string(),
            raw.cost.to_string(),
            rn[0].to_string(),
            rn[1].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// complexity
// ---------------------------------------------------------------------------

/// One sweep point: predicted payoff evaluations to reach accuracy `ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub scheme: Scheme,
    pub epsilon: f64,
    pub cost: u64,
}

/// Deterministic cost model sweep across target accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    /// Step exponent the nested/multilevel sizings assume.
    pub beta: f64,
    /// Refinement factor of the multilevel grids.
    pub m: u32,
    /// Level count of the multilevel grids (the coarsest bias scales as
    /// `h₀ = ε·Mᴸ`, so the finest level lands exactly on `ε`).
    pub levels: u32,
    pub rows: Vec<CostRow>,
    /// Fitted `ln cost` vs `ln ε` slope per scheme (`None` with < 2 points).
    pub slopes: BTreeMap<String, Option<f64>>,
}

fn ols_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let sxy = points
        .iter()
        .map(|p| (p.0 - mx) * (p.1 - my))
        .sum::<f64>();
    Some(sxy / sxx)
}

/// Evaluate the deterministic cost formulas over the accuracy grid. No
/// simulation: step counts and schedules are closed-form.
pub fn cmd_complexity(cfg: &RunConfig) -> Result<ComplexityReport, CliError> {
    let rate: LearningRate = cfg.rate.try_into().map_err(ConfigError::from)?;
    let beta = rate.beta();
    let m = cfg.accuracy.m.unwrap_or(2);
    let levels = cfg.accuracy.levels.unwrap_or(3);
    let epsilons: Vec<f64> = if cfg.epsilons.is_empty() {
        DEFAULT_EPSILONS.to_vec()
    } else {
        cfg.epsilons.clone()
    };
    for &eps in &epsilons {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "epsilons entries must lie in (0, 1), got {eps}"
            ))
            .into());
        }
    }

    let mut rows = Vec::new();
    let mut slopes = BTreeMap::new();
    for scheme in [Scheme::Nsa, Scheme::Ansa, Scheme::Mlsa, Scheme::Amlsa] {
        let mut points = Vec::with_capacity(epsilons.len());
        for &eps in &epsilons {
            let cost = match scheme {
                Scheme::Nsa => {
                    let (k, n) = nsa_params_for_accuracy(eps, beta)?;
                    n.checked_mul(k.k()).ok_or(MlsaError::CountOverflow)?
                }
                Scheme::Ansa => {
                    let (k, n) = nsa_params_for_accuracy(eps, 1.0)?;
                    n.checked_mul(k.k()).ok_or(MlsaError::CountOverflow)?
                }
                Scheme::Mlsa | Scheme::Amlsa => {
                    let h0 = BiasParam::from_h(eps * f64::from(m).powi(levels as i32))?;
                    let schedule = if scheme == Scheme::Amlsa {
                        schedule_amlsa(h0, m, levels)?
                    } else {
                        schedule_mlsa(h0, m, levels, beta)?
                    };
                    schedule_cost(h0, m, &schedule)?
                }
                _ => unreachable!("sweep covers nested and multilevel schemes"),
            };
            rows.push(CostRow {
                scheme,
                epsilon: eps,
                cost,
            });
            points.push((eps.ln(), (cost as f64).ln()));
        }
        slopes.insert(scheme.name().to_owned(), ols_slope(&points));
    }
    Ok(ComplexityReport {
        beta,
        m,
        levels,
        rows,
        slopes,
    })
}

/// Write the sweep as CSV rows `(scheme, epsilon, cost)`.
pub fn write_complexity(dir: &Path, report: &ComplexityReport) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("complexity.csv"))?;
    w.write_record(["scheme", "epsilon", "cost"])?;
    for row in &report.rows {
        w.write_record([
            row.scheme.name().to_owned(),
            row.epsilon.to_string(),
            row.cost.to_string(),
        ])?;
    }
    w.flush()?;
    fs::write(
        dir.join("slopes.json"),
        serde_json::to_string_pretty(&report.slopes)? + "\n",
    )?;
    Ok(())
}
