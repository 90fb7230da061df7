//! Limit-law ingredients: the long-run variance `Δ_β`, the p-variation
//! functional `γ_p`, regime-dependent limit standard deviations and
//! confidence intervals.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::EstimateResult;
use crate::model::{VolatilityModel, WeightFunction};
use crate::quad::{adaptive_simpson, trapezoid_uniform};
use crate::rng::{self, Purpose, StreamId};
use crate::simulate::{PathSample, RoundedObservations};
use crate::stats::{mean, normal_cdf, normal_pdf, normal_quantile, sample_variance};

/// Monte Carlo value of `Δ_β` for one `σ`, at `n_inner` and `2·n_inner`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaBetaEstimate {
    pub beta: f64,
    pub sigma_value: f64,
    pub value: f64,
    pub std_error: f64,
    pub n_inner: usize,
    pub replications: usize,
    /// Same replications continued to `2·n_inner` steps.
    pub value_refined: f64,
    pub std_error_refined: f64,
}

impl DeltaBetaEstimate {
    /// `|value − value_refined|` in units of the combined standard error.
    pub fn refinement_gap(&self) -> f64 {
        let se = self.std_error.hypot(self.std_error_refined);
        if se == 0.0 {
            if self.value == self.value_refined {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.value - self.value_refined).abs() / se
        }
    }
}

/// `E[(n^{-1/2} Σ_{i≤n} Z_i)²]` by Monte Carlo, where
/// `Z_i = β√(π/2)·|⌊f_{i-1} + σ ξ_i/β⌋| − σ`, `f_0 = U ~ Uniform[0, 1)`,
/// `f_i` the fractional part of `f_{i-1} + σ ξ_i/β` and `ξ_i` i.i.d. N(0, 1).
///
/// `Z` is `σ` times its value at `(β/σ, 1)`, so the simulation runs at unit
/// volatility. Replication `r` uses stream `(DeltaBeta, log2 n_inner, r)`
/// independently of `β`, so nearby `β` share random numbers.
pub fn delta_beta(beta: f64, sigma_value: f64, n_inner: usize, replications: usize, seed: u64) -> Result<DeltaBetaEstimate> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::param(format!("β must be positive, got {beta}")));
    }
    if !(sigma_value > 0.0 && sigma_value.is_finite()) {
        return Err(Error::param(format!("σ must be positive, got {sigma_value}")));
    }
    if n_inner < 256 {
        return Err(Error::param(format!("n_inner must be at least 256, got {n_inner}")));
    }
    if replications < 100 {
        return Err(Error::param(format!("need at least 100 replications, got {replications}")));
    }
    if replications > u32::MAX as usize {
        return Err(Error::param("too many replications"));
    }
    let c = beta / sigma_value;
    let inv_c = 1.0 / c;
    let jump = c * std::f64::consts::FRAC_PI_2.sqrt();
    let major = n_inner.ilog2() as u16;

    let sums: Vec<(f64, f64)> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, StreamId::new(Purpose::DeltaBeta, 0, major, r as u32));
            let mut f: f64 = rng.random();
            let mut s = 0.0;
            let mut s_first = 0.0;
            for i in 0..2 * n_inner {
                let xi: f64 = rng.sample(StandardNormal);
                let y = f + xi * inv_c;
                let m = y.floor();
                f = y - m;
                s += jump * m.abs() - 1.0;
                if i + 1 == n_inner {
                    s_first = s;
                }
            }
            (s_first * s_first / n_inner as f64, s * s / (2 * n_inner) as f64)
        })
        .collect();

    let scale = sigma_value * sigma_value;
    let first: Vec<f64> = sums.iter().map(|p| scale * p.0).collect();
    let second: Vec<f64> = sums.iter().map(|p| scale * p.1).collect();
    let se = |xs: &[f64]| (sample_variance(xs) / xs.len() as f64).sqrt();
    Ok(DeltaBetaEstimate {
        beta,
        sigma_value,
        value: mean(&first),
        std_error: se(&first),
        n_inner,
        replications,
        value_refined: mean(&second),
        std_error_refined: se(&second),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaBetaOptions {
    pub replications: usize,
    pub seed: u64,
    pub start_n_inner: usize,
    pub max_n_inner: usize,
}

impl Default for DeltaBetaOptions {
    fn default() -> Self {
        DeltaBetaOptions { replications: 2000, seed: 0, start_n_inner: 256, max_n_inner: 1 << 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergedDeltaBeta {
    pub estimate: DeltaBetaEstimate,
    pub converged: bool,
    pub history: Vec<DeltaBetaEstimate>,
}

impl ConvergedDeltaBeta {
    pub fn value(&self) -> f64 {
        self.estimate.value_refined
    }

    pub fn std_error(&self) -> f64 {
        self.estimate.std_error_refined
    }
}

/// Double `n_inner` from `max(start, 2^⌈log2 (β/σ)²⌉)` until the values at
/// `n_inner` and `2·n_inner` differ by less than two combined standard errors,
/// or `n_inner` would exceed the cap.
pub fn delta_beta_converged(beta: f64, sigma_value: f64, opts: &DeltaBetaOptions) -> Result<ConvergedDeltaBeta> {
    let c2 = (beta / sigma_value).powi(2);
    let mixing = if c2.is_finite() && c2 < (1u64 << 40) as f64 { (c2.ceil() as usize).next_power_of_two() } else { usize::MAX };
    let mut n_inner = opts.start_n_inner.max(256).max(mixing.min(opts.max_n_inner));
    let mut history = Vec::new();
    loop {
        let est = delta_beta(beta, sigma_value, n_inner, opts.replications, opts.seed)?;
        history.push(est);
        if est.refinement_gap() < 2.0 {
            return Ok(ConvergedDeltaBeta { estimate: est, converged: true, history });
        }
        if n_inner * 2 > opts.max_n_inner {
            log::warn!("Δ_β at β = {beta}, σ = {sigma_value} did not stabilize by n_inner = {n_inner}");
            return Ok(ConvergedDeltaBeta { estimate: est, converged: false, history });
        }
        n_inner *= 2;
    }
}

/// `Δ_β(σ)` on a grid of `σ` values for one `β`, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBetaTable {
    pub beta: f64,
    pub sigmas: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl DeltaBetaTable {
    pub fn from_entries(beta: f64, mut entries: Vec<(f64, f64, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::param("Δ_β table needs at least one entry"));
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::param("duplicate σ in Δ_β table"));
        }
        Ok(DeltaBetaTable {
            beta,
            sigmas: entries.iter().map(|e| e.0).collect(),
            values: entries.iter().map(|e| e.1).collect(),
            std_errors: entries.iter().map(|e| e.2).collect(),
        })
    }

    /// Converged Monte Carlo values at each of `sigmas`.
    pub fn compute(beta: f64, sigmas: &[f64], opts: &DeltaBetaOptions) -> Result<Self> {
        let entries = sigmas
            .iter()
            .map(|&s| delta_beta_converged(beta, s, opts).map(|c| (s, c.value(), c.std_error())))
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(beta, entries)
    }

    pub fn lookup(&self, sigma: f64) -> Result<f64> {
        let tol = 1e-9 * sigma.abs().max(1e-300);
        let first = self.sigmas[0];
        let last = *self.sigmas.last().expect("table is non-empty");
        if sigma < first - tol || sigma > last + tol {
            return Err(Error::Missing(format!(
                "Δ_β table for β = {} covers σ ∈ [{first}, {last}], asked for {sigma}",
                self.beta
            )));
        }
        let pos = self.sigmas.partition_point(|s| *s < sigma);
        if pos == 0 {
            return Ok(self.values[0]);
        }
        if pos == self.sigmas.len() {
            return Ok(self.values[pos - 1]);
        }
        let (s0, s1) = (self.sigmas[pos - 1], self.sigmas[pos]);
        let t = (sigma - s0) / (s1 - s0);
        Ok(self.values[pos - 1] * (1.0 - t) + self.values[pos] * t)
    }

    /// CSV `beta,sigma,value,std_error`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["beta", "sigma", "value", "std_error"]).map_err(csv_err)?;
        for i in 0..self.sigmas.len() {
            w.write_record([
                self.beta.to_string(),
                self.sigmas[i].to_string(),
                self.values[i].to_string(),
                self.std_errors[i].to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// `φ(x) − |x|Φ(−|x|)`: `xΦ(x) + φ(x)` (an antiderivative of `Φ`) minus `x⁺`.
fn tail_antiderivative(x: f64) -> f64 {
    let a = x.abs();
    normal_pdf(a) - a * normal_cdf(-a)
}

/// `γ_p(σ, β) = ∫_0^1 du E|(βu + σY)^{(β)}|^p`, with `(z)^{(β)} = β⌊z/β⌋` and
/// `Y ~ N(0, 1)`.
///
/// Integrating the cell probabilities over `u` in closed form gives, with
/// `c = β/σ` and `H` as in [`tail_antiderivative`],
/// `γ_p = β^p (σ/β) Σ_{m≠0} |m|^p [H(c(m+1)) − 2H(cm) + H(c(m−1))]`.
/// The series is cut where `c(|m|−1)` exceeds 40.
pub fn gamma_p(sigma_value: f64, beta: f64, p: f64) -> f64 {
    assert!(p > 0.0, "p must be positive");
    assert!(beta > 0.0, "β must be positive");
    assert!(sigma_value >= 0.0, "σ must be nonnegative");
    if sigma_value == 0.0 {
        return 0.0;
    }
    let c = beta / sigma_value;
    let m_max = (40.0 / c).ceil() as i64 + 2;
    let mut total = 0.0;
    // terms are even in m
    for m in 1..=m_max {
        let x = c * m as f64;
        let second = tail_antiderivative(x + c) - 2.0 * tail_antiderivative(x) + tail_antiderivative(x - c);
        total += (m as f64).powf(p) * second;
    }
    2.0 * beta.powf(p) * total / c
}

/// The three readings of `E|U + Z|` for `Z ~ N(0, σ²)` and `U` uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformShiftCheck {
    /// `E|U + Z|` exactly as written.
    pub literal: f64,
    /// `E|⌊U + Z⌋|`.
    pub floored: f64,
    /// `E|Z| = σ√(2/π)`.
    pub abs_z: f64,
}

pub fn uniform_shift_check(sigma_value: f64) -> UniformShiftCheck {
    let s = sigma_value;
    // E|μ + σY| = μ(1 − 2Φ(−μ/σ)) + 2σφ(μ/σ)
    let folded = |u: f64| u * (1.0 - 2.0 * normal_cdf(-u / s)) + 2.0 * s * normal_pdf(u / s);
    UniformShiftCheck {
        literal: adaptive_simpson(folded, 0.0, 1.0, 1e-13),
        floored: gamma_p(s, 1.0, 1.0),
        abs_z: s * crate::stats::SQRT_2_OVER_PI,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PVariation {
    pub statistic: f64,
    /// `None` when no path/model was supplied.
    pub theory: Option<f64>,
}

/// `α^{-p} β n^{-1} Σ|ΔX^{(α)}|^p` and, given the latent path, its limit
/// `β^{1−p} ∫_0^1 γ_p(σ(X_s), β) ds` by trapezoid on the fine grid.
pub fn p_variation_stat(
    obs: &RoundedObservations,
    p: f64,
    latent: Option<(&PathSample, &VolatilityModel)>,
) -> Result<PVariation> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::param(format!("p must be positive, got {p}")));
    }
    let (alpha, beta, n) = (obs.alpha(), obs.beta(), obs.n() as f64);
    if beta < 1.0 {
        log::warn!("β = {beta} < 1: the p-variation limit describes the large-β regime");
    }
    let sum: f64 = obs.pairs().map(|(a, b)| (b - a).abs().powf(p)).sum();
    let statistic = alpha.powf(-p) * beta * sum / n;
    let theory = match latent {
        None => None,
        Some((path, model)) => {
            path.ensure_valid()?;
            let integral = if model.is_constant() {
                gamma_p(model.sigma(model.x0()), beta, p)
            } else {
                let vals: Vec<f64> = path.fine_values().iter().map(|&x| gamma_p(model.sigma(x), beta, p)).collect();
                trapezoid_uniform(&vals, path.fine_step())
            };
            Some(beta.powf(1.0 - p) * integral)
        }
    };
    Ok(PVariation { statistic, theory })
}

/// Asymptotic regime of `β_n = α_n √n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", content = "beta", rename_all = "snake_case")]
pub enum Regime {
    BetaToZero,
    BetaFixed(f64),
    BetaToInfinity,
}

/// Regime together with its normalization `rate(n)`: `√n`, or `α_n^{-1}`
/// when `β_n → ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub regime: Regime,
}

impl RegimeSpec {
    pub fn new(regime: Regime) -> Result<Self> {
        if let Regime::BetaFixed(b) = regime {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::param(format!("fixed β must be positive, got {b}")));
            }
        }
        Ok(RegimeSpec { regime })
    }

    /// Regime of the family `α_n = c_α n^{-γ}`.
    pub fn from_exponent(gamma: f64, c_alpha: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) || !(c_alpha > 0.0 && c_alpha.is_finite()) {
            return Err(Error::param(format!("need γ > 0 and c_α > 0, got γ = {gamma}, c_α = {c_alpha}")));
        }
        let regime = if (gamma - 0.5).abs() <= 1e-12 {
            Regime::BetaFixed(c_alpha)
        } else if gamma > 0.5 {
            Regime::BetaToZero
        } else {
            Regime::BetaToInfinity
        };
        Ok(RegimeSpec { regime })
    }

    pub fn rate(&self, n: usize, alpha: f64) -> f64 {
        match self.regime {
            Regime::BetaToInfinity => 1.0 / alpha,
            _ => (n as f64).sqrt(),
        }
    }
}

/// Conditional standard deviation of the mixed normal limit of
/// `rate(n)·(θ̂ − θ)` along `path`.
pub fn limit_std(
    regime: &RegimeSpec,
    path: &PathSample,
    weight: &WeightFunction,
    model: &VolatilityModel,
    delta_beta_table: Option<&DeltaBetaTable>,
) -> Result<f64> {
    path.ensure_valid()?;
    let xs = path.fine_values();
    let h = path.fine_step();
    let integral = |f: &dyn Fn(f64) -> Result<f64>| -> Result<f64> {
        let vals = xs.iter().map(|&x| f(x)).collect::<Result<Vec<f64>>>()?;
        Ok(trapezoid_uniform(&vals, h))
    };
    let g4 = |x: f64| weight.g(x).powi(4);
    let var = match regime.regime {
        Regime::BetaToZero => {
            2.0 * (std::f64::consts::PI - 2.0) * integral(&|x| Ok(g4(x) * model.sigma(x).powi(4)))?
        }
        Regime::BetaToInfinity => 4.0 / 3.0 * integral(&|x| Ok(g4(x) * model.sigma(x).powi(2)))?,
        Regime::BetaFixed(beta) => {
            let table = delta_beta_table
                .ok_or_else(|| Error::Missing(format!("fixed-β limit needs a Δ_β table for β = {beta}")))?;
            if (table.beta - beta).abs() > 1e-9 * beta {
                return Err(Error::Mismatch(format!("Δ_β table is for β = {}, regime has β = {beta}", table.beta)));
            }
            4.0 * integral(&|x| {
                let s = model.sigma(x);
                Ok(g4(x) * s * s * table.lookup(s)?)
            })?
        }
    };
    Ok(var.max(0.0).sqrt())
}

/// `θ̂ ± z_{(1+level)/2}·limit_std/rate(n)`.
pub fn confidence_interval(result: &EstimateResult, regime: &RegimeSpec, limit_std: f64, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param(format!("level must lie in (0, 1), got {level}")));
    }
    if !(limit_std >= 0.0 && limit_std.is_finite()) {
        return Err(Error::param(format!("limit_std must be finite and nonnegative, got {limit_std}")));
    }
    let z = normal_quantile(0.5 * (1.0 + level))?;
    let half = z * limit_std / regime.rate(result.n, result.alpha);
    Ok((result.theta_hat - half, result.theta_hat + half))
}
