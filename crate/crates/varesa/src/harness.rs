//! CLT-validation harness: independent replications of any scheme,
//! renormalization of estimation errors by the scheme's CLT scaling, bivariate
//! Gaussian fitting, 95% confidence-ellipse geometry, and marginal normality
//! diagnostics.
//!
//! Replication `i` draws from a random stream derived deterministically from
//! `(master_seed, i)`, so the output matrix is bitwise identical whatever the
//! worker count or scheduling order.

use crate::mlsa::{run_mlsa, MlsaError};
use crate::rate::LearningRate;
use crate::sa::{run_scheme, Confidence};
use crate::sampler::{BiasParam, BiasedSource, ExactSource, LossModel};
use crate::streams::{replication_stream, rng_for_stream};
use crate::theory::Cov2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 95% quantile of the chi-square distribution with 2 degrees of freedom,
/// `−2·ln(0.05)`.
pub const CHI2_2_Q95: f64 = 5.991464547107982;

/// Failures of the harness operations.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("need at least {min} replications, got {got}")]
    TooFewReplications { got: u64, min: u64 },
    #[error("need at least {min} sample rows, got {got}")]
    TooFewSamples { got: usize, min: usize },
    #[error("scaling must produce positive finite factors, got {0:?}")]
    BadScaling([f64; 2]),
    #[error("covariance is not positive semidefinite")]
    NotPsd,
    #[error("replication {index} failed")]
    Replication {
        index: u64,
        #[source]
        source: MlsaError,
    },
}

/// The CLT renormalization of one scheme: the raw error pair
/// `(ξ̂ − ξ_ref, χ̂ − χ_ref)` is multiplied componentwise by
/// `(base^{−var_exponent}, base^{−es_exponent})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub var_exponent: f64,
    pub es_exponent: f64,
    /// The accuracy parameter the exponents act on: `h` for single-bias runs,
    /// `h_L` for multilevel runs.
    pub base: f64,
}

impl ScalingSpec {
    /// Nested scheme run to accuracy `h`: `(h^{−β}, h^{−1})`.
    pub fn nsa(h: f64, beta: f64) -> Self {
        Self {
            var_exponent: beta,
            es_exponent: 1.0,
            base: h,
        }
    }

    /// Averaged nested scheme: `(h^{−1}, h^{−1})`.
    pub fn ansa(h: f64) -> Self {
        Self {
            var_exponent: 1.0,
            es_exponent: 1.0,
            base: h,
        }
    }

    /// Multilevel scheme at finest bias `h_L`:
    /// `(h_L^{−1}, h_L^{−(1/β + (2β−1)/(4β(1+β)))})`.
    pub fn mlsa(h_l: f64, beta: f64) -> Self {
        Self {
            var_exponent: 1.0,
            es_exponent: 1.0 / beta + (2.0 * beta - 1.0) / (4.0 * beta * (1.0 + beta)),
            base: h_l,
        }
    }

    /// Averaged multilevel scheme: `(h_L^{−1}, h_L^{−9/8})`.
    pub fn amlsa(h_l: f64) -> Self {
        Self {
            var_exponent: 1.0,
            es_exponent: 1.125,
            base: h_l,
        }
    }

    /// Identity renormalization (raw errors).
    pub fn identity() -> Self {
        Self {
            var_exponent: 0.0,
            es_exponent: 0.0,
            base: 1.0,
        }
    }

    /// The multiplicative factors `(base^{−var_exp}, base^{−es_exp})`.
    pub fn factors(&self) -> [f64; 2] {
        [
            self.base.powf(-self.var_exponent),
            self.base.powf(-self.es_exponent),
        ]
    }

    /// Renormalize one raw error pair.
    pub fn apply(&self, error: [f64; 2]) -> [f64; 2] {
        let f = self.factors();
        [f[0] * error[0], f[1] * error[1]]
    }
}

/// One replication's untransformed output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawReplication {
    /// VaR estimate (averaged iterate when the scheme averages).
    pub var: f64,
    /// ES estimate.
    pub es: f64,
    /// Payoff evaluations consumed.
    pub cost: u64,
}

/// The output of [`run_replications`]: renormalized error rows (the CLT
/// samples) plus the raw per-replication estimates for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replications {
    /// `R×2` matrix of renormalized `(VaR, ES)` errors.
    pub renorm: Vec<[f64; 2]>,
    /// Raw estimates and costs, in replication order.
    pub raw: Vec<RawReplication>,
}

/// One scheme configuration a replication executes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SchemeRun {
    /// Recursion driven by exact losses (models exposing `exact_loss`).
    Exact {
        n_steps: u64,
        rate: LearningRate,
        averaged: bool,
    },
    /// Recursion driven by nested biased losses at a fixed bias.
    Biased {
        bias: BiasParam,
        n_steps: u64,
        rate: LearningRate,
        averaged: bool,
    },
    /// Multilevel estimator. The embedded config's `alpha` and `xi0` are
    /// overridden by the study-level values passed to [`SchemeRun::execute`],
    /// keeping one source of truth across schemes under comparison.
    Multilevel { config: crate::mlsa::MlConfig },
}

impl SchemeRun {
    /// Run one replication on `rng`'s stream.
    pub fn execute<M: LossModel>(
        &self,
        model: &M,
        alpha: Confidence,
        xi0: f64,
        rng: crate::streams::StreamRng,
    ) -> Result<RawReplication, MlsaError> {
        match self {
            SchemeRun::Exact {
                n_steps,
                rate,
                averaged,
            } => {
                let mut source = ExactSource::new(model, rng)?;
                let state = run_scheme(&mut source, *n_steps, rate, alpha, xi0)?;
                Ok(RawReplication {
                    var: if *averaged { state.xi_bar } else { state.xi },
                    es: state.chi,
                    cost: state.cost,
                })
            }
            SchemeRun::Biased {
                bias,
                n_steps,
                rate,
                averaged,
            } => {
                let mut source = BiasedSource::new(model, *bias, rng);
                let state = run_scheme(&mut source, *n_steps, rate, alpha, xi0)?;
                Ok(RawReplication {
                    var: if *averaged { state.xi_bar } else { state.xi },
                    es: state.chi,
                    cost: state.cost,
                })
            }
            SchemeRun::Multilevel { config } => {
                let mut cfg = config.clone();
                cfg.alpha = alpha;
                cfg.xi0 = xi0;
                let est = run_mlsa(model, &cfg, &rng)?;
                Ok(RawReplication {
                    var: est.var,
                    es: est.es,
                    cost: est.cost,
                })
            }
        }
    }
}

/// Run `r ≥ 2` independent replications of `run` and renormalize each error
/// against `target = (ξ_ref, χ_ref)` with `scaling`.
///
/// Replication `i` uses the stream `replication_stream(i)` of `master_seed`,
/// so rows are bitwise deterministic regardless of `workers` (0 = rayon
/// default) or execution order. The first failing replication (in index
/// order) aborts the run.
#[allow(clippy::too_many_arguments)]
pub fn run_replications<M: LossModel>(
    model: &M,
    run: &SchemeRun,
    alpha: Confidence,
    xi0: f64,
    target: (f64, f64),
    scaling: &ScalingSpec,
    r: u64,
    master_seed: u64,
    workers: usize,
) -> Result<Replications, HarnessError> {
    if r < 2 {
        return Err(HarnessError::TooFewReplications { got: r, min: 2 });
    }
    let factors = scaling.factors();
    if !(factors[0] > 0.0 && factors[0].is_finite() && factors[1] > 0.0 && factors[1].is_finite())
    {
        return Err(HarnessError::BadScaling(factors));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool construction cannot fail with a valid thread count");
    let results: Vec<Result<RawReplication, MlsaError>> = pool.install(|| {
        (0..r)
            .into_par_iter()
            .map(|i| {
                let rng = rng_for_stream(master_seed, replication_stream(i));
                run.execute(model, alpha, xi0, rng)
            })
            .collect()
    });

    let mut raw = Vec::with_capacity(results.len());
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(row) => raw.push(row),
            Err(source) => {
                return Err(HarnessError::Replication {
                    index: i as u64,
                    source,
                })
            }
        }
    }
    let renorm = raw
        .iter()
        .map(|row| scaling.apply([row.var - target.0, row.es - target.1]))
        .collect();
    Ok(Replications { renorm, raw })
}

/// Simulation-based stationary pair `(ξ^h⋆, χ^h⋆)` of the biased recursion:
/// average the final states of `outcomes` independent nested runs of
/// `n_steps` each. This is the reference protocol for renormalizing biased
/// and multilevel studies when no closed form is available.
#[allow(clippy::too_many_arguments)]
pub fn protocol_reference<M: LossModel>(
    model: &M,
    bias: BiasParam,
    rate: &LearningRate,
    alpha: Confidence,
    n_steps: u64,
    outcomes: u64,
    master_seed: u64,
    workers: usize,
) -> Result<(f64, f64), HarnessError> {
    let run = SchemeRun::Biased {
        bias,
        n_steps,
        rate: *rate,
        averaged: false,
    };
    let reps = run_replications(
        model,
        &run,
        alpha,
        0.0,
        (0.0, 0.0),
        &ScalingSpec::identity(),
        outcomes,
        master_seed,
        workers,
    )?;
    let n = reps.raw.len() as f64;
    let (mut xi, mut chi) = (0.0, 0.0);
    for row in &reps.raw {
        xi += row.var;
        chi += row.es;
    }
    Ok((xi / n, chi / n))
}

/// A bivariate Gaussian fitted to renormalized error samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    /// Sample mean.
    pub mu: [f64; 2],
    /// Unbiased sample covariance (divides by `r − 1`).
    pub sigma: Cov2,
    /// Number of samples fitted.
    pub r: u64,
}

/// Fit a bivariate Gaussian by moment matching: sample mean and unbiased
/// sample covariance.
pub fn fit_gaussian(samples: &[[f64; 2]]) -> Result<GaussianFit, HarnessError> {
    let r = samples.len();
    if r < 2 {
        return Err(HarnessError::TooFewSamples { got: r, min: 2 });
    }
    let rf = r as f64;
    let mut mu = [0.0, 0.0];
    for s in samples {
        mu[0] += s[0];
        mu[1] += s[1];
    }
    mu[0] /= rf;
    mu[1] /= rf;
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for s in samples {
        let dx = s[0] - mu[0];
        let dy = s[1] - mu[1];
        xx += dx * dx;
        xy += dx * dy;
        yy += dy * dy;
    }
    let denom = rf - 1.0;
    Ok(GaussianFit {
        mu,
        sigma: Cov2 {
            xx: xx / denom,
            xy: xy / denom,
            yy: yy / denom,
        },
        r: r as u64,
    })
}

/// The 95% confidence ellipse of a fitted Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Major then minor semi-axis: `√(λ_i · χ²₂(0.95))`.
    pub semi_axes: [f64; 2],
    /// Angle of the major axis against the VaR coordinate, in `(−π/2, π/2]`.
    pub angle: f64,
}

/// 95% confidence ellipse from the closed-form eigendecomposition of the
/// fitted 2×2 covariance.
pub fn ellipse_95(fit: &GaussianFit) -> Result<Ellipse, HarnessError> {
    let s = fit.sigma;
    if !s.is_psd() {
        return Err(HarnessError::NotPsd);
    }
    let [l1, l2] = s.eigenvalues();
    let angle = 0.5 * (2.0 * s.xy).atan2(s.xx - s.yy);
    Ok(Ellipse {
        center: fit.mu,
        semi_axes: [
            (l1.max(0.0) * CHI2_2_Q95).sqrt(),
            (l2.max(0.0) * CHI2_2_Q95).sqrt(),
        ],
        angle,
    })
}

/// Moment diagnostics and histogram data of one marginal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalStats {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// 50 equal-width bins spanning the sample range: `(lo, hi, count)`.
    pub histogram: Vec<(f64, f64, u64)>,
    /// Zero sample dispersion: skewness and kurtosis are undefined (reported
    /// as 0) and the histogram is omitted.
    pub degenerate: bool,
}

/// Normality diagnostics for both marginals of a renormalized sample matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub var: MarginalStats,
    pub es: MarginalStats,
}

const HIST_BINS: usize = 50;

fn marginal_stats(values: &[f64]) -> MarginalStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return MarginalStats {
            mean,
            std: 0.0,
            skewness: 0.0,
            excess_kurtosis: 0.0,
            histogram: Vec::new(),
            degenerate: true,
        };
    }
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let width = (hi - lo) / HIST_BINS as f64;
    let mut counts = vec![0u64; HIST_BINS];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(HIST_BINS - 1);
        counts[idx] += 1;
    }
    let histogram = counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect();
    MarginalStats {
        mean,
        std: m2.sqrt(),
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        histogram,
        degenerate: false,
    }
}

/// Marginal moment statistics (skewness, excess kurtosis) and 50-bin
/// histograms for plotting against the limit bell curves. Requires at least
/// 100 rows for the moments to be meaningful.
pub fn normality_report(samples: &[[f64; 2]]) -> Result<NormalityReport, HarnessError> {
    if samples.len() < 100 {
        return Err(HarnessError::TooFewSamples {
            got: samples.len(),
            min: 100,
        });
    }
    let var: Vec<f64> = samples.iter().map(|s| s[0]).collect();
    let es: Vec<f64> = samples.iter().map(|s| s[1]).collect();
    Ok(NormalityReport {
        var: marginal_stats(&var),
        es: marginal_stats(&es),
    })
}
