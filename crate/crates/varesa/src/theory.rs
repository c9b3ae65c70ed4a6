//! Asymptotic covariance matrices of the four estimation schemes, Monte Carlo
//! estimators for their statistically-accessible entries, first-order bias
//! coefficients, and closed-form evaluation of everything for the swap model.
//!
//! The four CLTs share a small vocabulary of model-dependent scalars
//! ([`ModelQuantities`]): the stationary pair `(ξ⋆, χ⋆)`, the loss density at
//! the VaR, tail moments of `(X₀ − ξ⋆)⁺`, the coupling limit `G`'s
//! interaction with the loss, and the bias-expansion kernel `v`. For the swap
//! model every one of them has a Gaussian closed form; for general models the
//! `mc_*` estimators below recover the simulation-accessible ones along a
//! recursion trajectory.

use std::collections::BTreeMap;

use crate::normal;
use crate::rate::LearningRate;
use crate::sa::{nsa_step, Confidence, SaState};
use crate::sampler::{BiasParam, LossModel};
use crate::streams::StreamRng;
use crate::swap::{SwapError, SwapModel, SwapParams};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failures of the theoretical evaluators.
#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("step exponent must lie in (1/2, 1], got {0}")]
    BadBeta(f64),
    #[error("gamma1 must be positive and finite, got {0}")]
    BadGamma1(f64),
    #[error(
        "unstable regime: with β = 1 the VaR variance requires γ₁ > {threshold}, got {gamma1}"
    )]
    Unstable { gamma1: f64, threshold: f64 },
    #[error("model quantities violate an invariant: {0}")]
    BadQuantities(&'static str),
    #[error("estimator needs at least two samples, got {0}")]
    TooFewSamples(u64),
    #[error("inner sample count must be ≥ 2 to estimate the conditional variance, got {0}")]
    InnerCountTooSmall(u64),
    #[error("refinement factor must be ≥ 2, got {0}")]
    BadRefinement(u32),
    #[error(transparent)]
    Swap(#[from] SwapError),
}

/// The model-dependent scalars appearing in the four asymptotic covariance
/// matrices and the bias expansion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelQuantities {
    /// `f_{X₀}(ξ⁰⋆)`: exact-loss density at the VaR.
    pub f_at_xistar: f64,
    /// `ξ⁰⋆`: exact VaR.
    pub xi_star: f64,
    /// `χ⁰⋆`: exact ES.
    pub chi_star: f64,
    /// `E[(X₀ − ξ⁰⋆)⁺]`.
    pub mean_pos_part: f64,
    /// `Var((X₀ − ξ⁰⋆)⁺)`.
    pub var_pos_part: f64,
    /// `Var((X_{h₀} − ξ^{h₀}⋆)⁺)` at the coarsest bias of the ladder.
    pub var_pos_part_h0: f64,
    /// `E[|G| f_G(ξ⁰⋆)]`, `G` the coupling limit of the rescaled level
    /// increments.
    pub e_absg_fg: f64,
    /// `Var(1_{X₀>ξ⁰⋆} G)`.
    pub var_indg: f64,
    /// `v(ξ⁰⋆)`, the first-order bias kernel at the VaR:
    /// `F_{X_h}(ξ) = F_{X₀}(ξ) + h·v(ξ) + o(h)`.
    pub v_at_xistar: f64,
    /// `∫_{ξ⁰⋆}^∞ v(ξ) dξ`.
    pub v_integral: f64,
}

impl ModelQuantities {
    pub fn validate(&self) -> Result<(), TheoryError> {
        let all = [
            self.f_at_xistar,
            self.xi_star,
            self.chi_star,
            self.mean_pos_part,
            self.var_pos_part,
            self.var_pos_part_h0,
            self.e_absg_fg,
            self.var_indg,
            self.v_at_xistar,
            self.v_integral,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(TheoryError::BadQuantities("non-finite entry"));
        }
        if self.f_at_xistar <= 0.0 {
            return Err(TheoryError::BadQuantities("density at the VaR must be positive"));
        }
        if self.var_pos_part < 0.0 || self.var_pos_part_h0 < 0.0 || self.var_indg < 0.0 {
            return Err(TheoryError::BadQuantities("variances must be non-negative"));
        }
        Ok(())
    }
}

/// A symmetric 2×2 covariance matrix over the (VaR, ES) coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cov2 {
    /// VaR-component variance.
    pub xx: f64,
    /// VaR–ES covariance.
    pub xy: f64,
    /// ES-component variance.
    pub yy: f64,
}

impl Cov2 {
    /// Eigenvalues in descending order (closed form for symmetric 2×2).
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.xx + self.yy);
        let disc = (0.25 * (self.xx - self.yy) * (self.xx - self.yy) + self.xy * self.xy).sqrt();
        [mean + disc, mean - disc]
    }

    /// Positive semidefinite up to numerical tolerance (−1e-12 on the
    /// smallest eigenvalue).
    pub fn is_psd(&self) -> bool {
        self.eigenvalues()[1] >= -1e-12
    }
}

/// Asymptotic covariance of the nested scheme run for `⌈h⁻²⌉` iterations:
///
/// ```text
/// ⎡ αγ₁/(2f − γ₁⁻¹(1−α)·1_{β=1})      α(χ⋆−ξ⋆)/f·1_{β=1} ⎤
/// ⎣ symmetric                          Var((X₀−ξ⋆)⁺)/(1−α)² ⎦
/// ```
///
/// With `β = 1` the VaR entry requires `2fγ₁ > 1−α`; the returned error marks
/// the instability region where the entry blows up like
/// `(γ₁ − (1−α)/(2f))⁻¹`.
pub fn sigma_nsa(
    beta: f64,
    gamma1: f64,
    q: &ModelQuantities,
    alpha: Confidence,
) -> Result<Cov2, TheoryError> {
    q.validate()?;
    if !(beta > 0.5 && beta <= 1.0) {
        return Err(TheoryError::BadBeta(beta));
    }
    if !(gamma1 > 0.0 && gamma1.is_finite()) {
        return Err(TheoryError::BadGamma1(gamma1));
    }
    let a = alpha.alpha();
    let tail = alpha.tail();
    let f = q.f_at_xistar;
    let beta_is_one = beta == 1.0;
    let denom = 2.0 * f - if beta_is_one { tail / gamma1 } else { 0.0 };
    if denom <= 0.0 {
        return Err(TheoryError::Unstable {
            gamma1,
            threshold: tail / (2.0 * f),
        });
    }
    Ok(Cov2 {
        xx: a * gamma1 / denom,
        xy: if beta_is_one {
            a * (q.chi_star - q.xi_star) / f
        } else {
            0.0
        },
        yy: q.var_pos_part / (tail * tail),
    })
}

/// Asymptotic covariance of the averaged nested scheme:
///
/// ```text
/// ⎡ α(1−α)/f²                     (α/(1−α))·E[(X₀−ξ⋆)⁺]/f ⎤
/// ⎣ symmetric                      Var((X₀−ξ⋆)⁺)/(1−α)²    ⎦
/// ```
///
/// Free of `γ₁` and `β`: averaging reaches the optimal VaR variance without
/// the `β = 1` step-size constraint.
pub fn sigma_ansa(q: &ModelQuantities, alpha: Confidence) -> Result<Cov2, TheoryError> {
    q.validate()?;
    let a = alpha.alpha();
    let tail = alpha.tail();
    let f = q.f_at_xistar;
    Ok(Cov2 {
        xx: a * tail / (f * f),
        xy: (a / tail) * q.mean_pos_part / f,
        yy: q.var_pos_part / (tail * tail),
    })
}

/// Asymptotic covariance of the multilevel scheme (diagonal):
///
/// VaR entry `γ₁E[|G|f_G(ξ⋆)]/((1−α)(2f − (1−α)γ₁⁻¹·1_{β=1}))`; ES entry
/// combines the level-0 term and the asymptotic coupling term,
///
/// ```text
/// h₀^a (M^a−1)^{1/β}/(1−α)² · [ h₀⁻¹Var((X_{h₀}−ξ^{h₀}⋆)⁺)/M^{a/β}
///                               + Var(1_{X₀>ξ⋆}G)/(M^a−1) ],
/// a = (2β−1)/(2(1+β)).
/// ```
pub fn sigma_mlsa(
    beta: f64,
    gamma1: f64,
    h0: BiasParam,
    m: u32,
    q: &ModelQuantities,
    alpha: Confidence,
) -> Result<Cov2, TheoryError> {
    q.validate()?;
    if !(beta > 0.5 && beta <= 1.0) {
        return Err(TheoryError::BadBeta(beta));
    }
    if !(gamma1 > 0.0 && gamma1.is_finite()) {
        return Err(TheoryError::BadGamma1(gamma1));
    }
    if m < 2 {
        return Err(TheoryError::BadRefinement(m));
    }
    let tail = alpha.tail();
    let f = q.f_at_xistar;
    let beta_is_one = beta == 1.0;
    let denom = 2.0 * f - if beta_is_one { tail / gamma1 } else { 0.0 };
    if denom <= 0.0 {
        return Err(TheoryError::Unstable {
            gamma1,
            threshold: tail / (2.0 * f),
        });
    }
    let xx = gamma1 * q.e_absg_fg / (tail * denom);

    let a_exp = (2.0 * beta - 1.0) / (2.0 * (1.0 + beta));
    let mf = f64::from(m);
    let h0f = h0.h();
    let ma = mf.powf(a_exp) - 1.0;
    let prefactor = h0f.powf(a_exp) * ma.powf(1.0 / beta) / (tail * tail);
    let level0 = q.var_pos_part_h0 / (h0f * mf.powf(a_exp / beta));
    let asymptotic = q.var_indg / ma;
    Ok(Cov2 {
        xx,
        xy: 0.0,
        yy: prefactor * (level0 + asymptotic),
    })
}

/// Asymptotic covariance of the averaged multilevel scheme (diagonal):
///
/// ```text
/// VaR: E[|G|f_G(ξ⋆)]/((1−α)²(1−M^{−1/4}))
/// ES:  h₀^{−3/8}(1−M^{−1/4})^{1/2}Var((X_{h₀}−ξ^{h₀}⋆)⁺)/(1−α)²
///        + h₀^{1/4}Var(1_{X₀>ξ⋆}G)/((1−α)²M^{1/4})
/// ```
pub fn sigma_amlsa(
    h0: BiasParam,
    m: u32,
    q: &ModelQuantities,
    alpha: Confidence,
) -> Result<Cov2, TheoryError> {
    q.validate()?;
    if m < 2 {
        return Err(TheoryError::BadRefinement(m));
    }
    let tail2 = alpha.tail() * alpha.tail();
    let mf = f64::from(m);
    let mq = mf.powf(-0.25);
    let h0f = h0.h();
    let level0 = h0f.powf(-0.375) * (1.0 - mq).sqrt() * q.var_pos_part_h0 / tail2;
    let asymptotic = h0f.powf(0.25) * q.var_indg * mq / tail2;
    Ok(Cov2 {
        xx: q.e_absg_fg / (tail2 * (1.0 - mq)),
        xy: 0.0,
        yy: level0 + asymptotic,
    })
}

/// First-order bias coefficients: `ξ^h⋆ − ξ⁰⋆ = −v(ξ⋆)/f·h + o(h)` and
/// `χ^h⋆ − χ⁰⋆ = −h∫_{ξ⋆}^∞ v/(1−α) + o(h)`. These are the CLT means of the
/// biased-run corollaries (the VaR one enters only when `β = 1`, where the
/// `h^{−β}` renormalization does not absorb the `O(h)` bias).
pub fn bias_limit(q: &ModelQuantities, alpha: Confidence) -> (f64, f64) {
    (
        -q.v_at_xistar / q.f_at_xistar,
        -q.v_integral / alpha.tail(),
    )
}

/// Plug-in variance of `(X^{(k)} − ξ_{k−1})⁺` along a recursion trajectory of
/// `(pre-step VaR iterate, innovation)` pairs — the simulation estimate of
/// `Var((X₀ − ξ⁰⋆)⁺)`. The confidence level rides along because consumers
/// rescale the result by `(1−α)⁻²` into the ES variance factor; the plug-in
/// variance itself does not involve it.
pub fn mc_var_pos_part(
    trajectory: &[(f64, f64)],
    alpha: Confidence,
) -> Result<f64, TheoryError> {
    let _ = alpha;
    let n = trajectory.len() as u64;
    if n < 2 {
        return Err(TheoryError::TooFewSamples(n));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &(xi, x)) in trajectory.iter().enumerate() {
        let w = (x - xi).max(0.0);
        let delta = w - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (w - mean);
    }
    Ok(m2 / n as f64)
}

/// Simulation estimates of the coupling quantities along a biased recursion
/// at the finest bias `h_L = 1/K_L`: per step, draw one outer scenario and
/// `K_L` payoffs, form the plug-in conditional variance `ŝ²`, synthesize
/// `G ≈ √((M−1)ŝ²)·𝒩(0,1)` with a fresh normal, and keep `1_{X>ξ_{k−1}}·G`.
/// Returns `(Var(1_{X₀>ξ⋆}G) plug-in estimate, G-scale estimate)` where the
/// G-scale is `√(mean of (M−1)ŝ²)` — the standard deviation of the
/// synthesized `G`.
pub fn mc_g_quantities<M: LossModel>(
    model: &M,
    bias_l: BiasParam,
    m: u32,
    rate: &LearningRate,
    alpha: Confidence,
    n_samples: u64,
    rng: &mut StreamRng,
) -> Result<(f64, f64), TheoryError> {
    if n_samples < 2 {
        return Err(TheoryError::TooFewSamples(n_samples));
    }
    let k_l = bias_l.k();
    if k_l < 2 {
        return Err(TheoryError::InnerCountTooSmall(k_l));
    }
    if m < 2 {
        return Err(TheoryError::BadRefinement(m));
    }
    let m_minus_1 = f64::from(m) - 1.0;
    let mut state = SaState::new(0.0);
    let mut w_mean = 0.0;
    let mut w_m2 = 0.0;
    let mut g2_mean = 0.0;
    for i in 0..n_samples {
        let outer = model.sample_outer(rng);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..k_l {
            let p = model.sample_payoff(&outer, rng);
            sum += p;
            sumsq += p * p;
        }
        let x = sum / k_l as f64;
        let s2 = (sumsq / k_l as f64 - x * x).max(0.0);
        let g2 = m_minus_1 * s2;
        let noise: f64 = StandardNormal.sample(rng);
        let g = g2.sqrt() * noise;
        let w = if x > state.xi { g } else { 0.0 };

        let delta = w - w_mean;
        w_mean += delta / (i + 1) as f64;
        w_m2 += delta * (w - w_mean);
        g2_mean += (g2 - g2_mean) / (i + 1) as f64;

        state = nsa_step(state, x, rate, alpha);
    }
    Ok((w_m2 / n_samples as f64, g2_mean.sqrt()))
}

/// A [`ModelQuantities`] bundle with the context it was computed under and a
/// per-entry provenance map (how each number was obtained).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantitiesReport {
    pub alpha: f64,
    /// Coarsest bias the `h₀`-dependent entries refer to.
    pub h0: f64,
    /// Refinement factor the `G`-related entries refer to.
    pub m: u32,
    pub quantities: ModelQuantities,
    pub provenance: BTreeMap<String, String>,
}

/// Closed-form [`ModelQuantities`] for the swap model.
///
/// Everything reduces to Gaussian algebra: `X_h ~ N(0, η² + h·s²)` exactly,
/// `ξ^h⋆ = sd_h·Φ⁻¹(α)`, and the coupling limit `G ~ N(0, (M−1)s²)` is
/// independent of `X₀`, giving `E[|G|f_G(ξ⋆)] = √(2(M−1)s²/π)·f_{X₀}(ξ⋆)`
/// and `Var(1_{X₀>ξ⋆}G) = (1−α)(M−1)s²`.
pub fn swap_quantities(
    params: &SwapParams,
    h0: BiasParam,
    m: u32,
) -> Result<QuantitiesReport, TheoryError> {
    if m < 2 {
        return Err(TheoryError::BadRefinement(m));
    }
    let model = SwapModel::new(params.clone())?;
    let d = model.derived();
    let eta = d.eta;
    if eta.is_nan() || eta <= 0.0 {
        return Err(TheoryError::BadQuantities(
            "degenerate swap loss: η = 0 has no density",
        ));
    }
    let s2 = d.s2_inner;
    let alpha = params.alpha.alpha();
    let tail = params.alpha.tail();
    let q = normal::inv_cdf(alpha);
    let pdf_q = normal::pdf(q);
    let f0 = pdf_q / eta;

    // Standard-normal tail moments at threshold q reused by every entry:
    // E[(Z−q)⁺] = φ(q) − q(1−α), E[((Z−q)⁺)²] = (1+q²)(1−α) − qφ(q).
    let mean_unit = pdf_q - q * tail;
    let var_unit = (1.0 + q * q) * tail - q * pdf_q - mean_unit * mean_unit;

    let mm1_s2 = (f64::from(m) - 1.0) * s2;
    let quantities = ModelQuantities {
        f_at_xistar: f0,
        xi_star: eta * q,
        chi_star: eta * pdf_q / tail,
        mean_pos_part: eta * mean_unit,
        var_pos_part: eta * eta * var_unit,
        var_pos_part_h0: (eta * eta + h0.h() * s2) * var_unit,
        e_absg_fg: (2.0 * mm1_s2 / std::f64::consts::PI).sqrt() * f0,
        var_indg: tail * mm1_s2,
        v_at_xistar: -s2 * q * pdf_q / (2.0 * eta * eta),
        v_integral: -s2 * pdf_q / (2.0 * eta),
    };
    quantities.validate()?;

    let mut provenance = BTreeMap::new();
    let mut tag = |k: &str, v: &str| {
        provenance.insert(k.to_string(), v.to_string());
    };
    tag("f_at_xistar", "closed form: Gaussian density at the quantile");
    tag("xi_star", "closed form: Gaussian quantile");
    tag("chi_star", "closed form: Gaussian tail mean");
    tag("mean_pos_part", "closed form: Gaussian partial first moment");
    tag("var_pos_part", "closed form: Gaussian partial second moment");
    tag(
        "var_pos_part_h0",
        "closed form: biased loss is exactly Gaussian with variance η² + h₀s²",
    );
    tag(
        "e_absg_fg",
        "closed form: G ~ N(0,(M−1)s²) independent of X₀, E|G| = √(2(M−1)s²/π)",
    );
    tag("var_indg", "closed form: independence splits the indicator");
    tag("v_at_xistar", "closed form: ∂_h Φ(ξ/sd_h) at h = 0");
    tag("v_integral", "closed form: ∫ξφ(ξ/η)dξ over the tail");

    Ok(QuantitiesReport {
        alpha,
        h0: h0.h(),
        m,
        quantities,
        provenance,
    })
}
