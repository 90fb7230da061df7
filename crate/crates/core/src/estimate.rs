//! Estimators computed from rounded observations only.
//!
//! All of them are built from the weighted absolute increments
//! `w(X^{(α)}_{(i-1)/n})·|X^{(α)}_{i/n} − X^{(α)}_{(i-1)/n}|`, where `w` is `g`
//! or `|g g'|^{1/2}` evaluated at the rounded level (zero off the weight's
//! domain), summed over dyadic cells. The `√(π/2)` factor undoes
//! `E|N(0, 1)| = √(2/π)`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GPrimeSign, WeightFunction};
use crate::simulate::RoundedObservations;
use crate::wavelet::cell_of;

// Guards floor() of level formulas against representation error when the
// argument is an exact integer in real arithmetic (e.g. log2 of 2^-16).
const LEVEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "theta_tilde")]
    ThetaTilde,
    #[serde(rename = "theta_hat_S")]
    ThetaHatS,
    #[serde(rename = "rv")]
    Rv,
    #[serde(rename = "rv_log")]
    RvLog,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::ThetaTilde => "theta_tilde",
            EstimatorKind::ThetaHatS => "theta_hat_S",
            EstimatorKind::Rv => "rv",
            EstimatorKind::RvLog => "rv_log",
        }
    }
}

fn sqrt_pi_over_2() -> f64 {
    FRAC_PI_2.sqrt()
}

fn level_weights(obs: &RoundedObservations, w: impl Fn(f64) -> f64) -> Vec<f64> {
    obs.pairs().map(|(prev, cur)| w(prev) * (cur - prev).abs()).collect()
}

fn warn_if_not_dyadic(n: usize) {
    if !n.is_power_of_two() {
        log::warn!("n = {n} is not a power of two; dyadic cells hold unequal sample counts");
    }
}

fn check_level(n: usize, j: u32, half_cells: bool) -> Result<()> {
    let needed = if half_cells { j + 1 } else { j };
    if needed >= usize::BITS - 1 || (1usize << needed) > n {
        let reason = if half_cells { "need 2^{j+1} ≤ n" } else { "need 2^j ≤ n" };
        return Err(Error::Level { level: j, n, reason });
    }
    Ok(())
}

/// `Σ_{i: i/n ∈ cell k} weights[i-1]` for each of the `2^j` cells.
fn cell_sums(weights: &[f64], j: u32) -> Vec<f64> {
    let n = weights.len();
    let mut out = vec![0.0; 1 << j];
    for (i, w) in (1..=n).zip(weights) {
        out[cell_of(i, n, j)] += w;
    }
    out
}

/// `Σ_i sign(ψ_{jk}(i/n))·weights[i-1]`: right half-cell minus left half-cell.
fn signed_half_cell_sums(weights: &[f64], j: u32) -> Vec<f64> {
    let n = weights.len();
    let mut out = vec![0.0; 1 << j];
    for (i, w) in (1..=n).zip(weights) {
        let half = cell_of(i, n, j + 1);
        if half % 2 == 0 {
            out[half / 2] -= w;
        } else {
            out[half / 2] += w;
        }
    }
    out
}

fn scaled_cells(weights: &[f64], j: u32) -> Vec<f64> {
    let n = weights.len() as f64;
    let scale = sqrt_pi_over_2() * 2f64.powf(0.5 * j as f64) / n.sqrt();
    cell_sums(weights, j).into_iter().map(|s| scale * s).collect()
}

fn scaled_details(weights: &[f64], j: u32) -> Vec<f64> {
    let n = weights.len() as f64;
    // ψ_{jk} = ±2^{j/2}
    let scale = sqrt_pi_over_2() * 2f64.powf(0.5 * j as f64) / n.sqrt();
    signed_half_cell_sums(weights, j).into_iter().map(|s| scale * s).collect()
}

/// `ĉ_{jk}` for `k = 0..2^j`.
pub fn c_hat(obs: &RoundedObservations, weight: &WeightFunction, j: u32) -> Result<Vec<f64>> {
    check_level(obs.n(), j, false)?;
    warn_if_not_dyadic(obs.n());
    Ok(scaled_cells(&level_weights(obs, |x| weight.g(x)), j))
}

/// `d̂_{jk}` for `k = 0..2^j`.
pub fn d_hat(obs: &RoundedObservations, weight: &WeightFunction, j: u32) -> Result<Vec<f64>> {
    check_level(obs.n(), j, true)?;
    warn_if_not_dyadic(obs.n());
    Ok(scaled_details(&level_weights(obs, |x| weight.g(x)), j))
}

/// `ê_{jk}`: as `ĉ` with `g` replaced by `|g g'|^{1/2}`.
pub fn e_hat(obs: &RoundedObservations, weight: &WeightFunction, j: u32) -> Result<Vec<f64>> {
    check_level(obs.n(), j, false)?;
    warn_if_not_dyadic(obs.n());
    Ok(scaled_cells(&level_weights(obs, |x| weight.sqrt_abs_gg_prime(x)), j))
}

fn sum_sq(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

/// `⌊log2(α^{-1} ∧ √n)⌋`, clamped at 0.
pub fn base_level(n: usize, alpha: f64) -> u32 {
    let l = (-alpha.log2()).min(0.5 * (n as f64).log2());
    (l + LEVEL_EPS).floor().max(0.0) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    /// `Σ_k ĉ²_{j1 k}`.
    pub c_part: f64,
    /// `R_n(S) = Σ_{j=j1}^{jtop} 2^{j2-j} Q̂_{j2}`.
    #[serde(rename = "R_part")]
    pub r_part: f64,
    /// `α (1_{g'≥0} − 1_{g'≤0}) Σ_k ê²_{j0 k}`.
    pub bias_part: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub theta_hat: f64,
    pub estimator_kind: EstimatorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<LevelPlan>,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<Components>,
}

impl EstimateResult {
    fn plain(obs: &RoundedObservations, kind: EstimatorKind, value: f64) -> Self {
        EstimateResult {
            theta_hat: value,
            estimator_kind: kind,
            plan: None,
            n: obs.n(),
            alpha: obs.alpha(),
            beta: obs.beta(),
            components: None,
        }
    }
}

/// First estimator `θ̃ = Σ_k ĉ²_{j0 k}` at the default base level.
pub fn theta_tilde(obs: &RoundedObservations, weight: &WeightFunction) -> Result<EstimateResult> {
    if obs.n() < 4 {
        return Err(Error::param(format!("theta_tilde needs n ≥ 4, got {}", obs.n())));
    }
    theta_tilde_at(obs, weight, base_level(obs.n(), obs.alpha()))
}

/// `Σ_k ĉ²_{jk}` at an explicit level.
pub fn theta_tilde_at(obs: &RoundedObservations, weight: &WeightFunction, j0: u32) -> Result<EstimateResult> {
    let value = sum_sq(&c_hat(obs, weight, j0)?);
    Ok(EstimateResult::plain(obs, EstimatorKind::ThetaTilde, value))
}

/// Levels of the compensated estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelPlan {
    pub n: usize,
    pub alpha: f64,
    pub j0: u32,
    pub a: f64,
    pub rho: f64,
    pub j1: u32,
    pub j2: u32,
    pub jtop: u32,
    pub r_n: f64,
}

/// Explicit overrides for `(a, j1, j2, j0)`; `None` keeps the default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanOverrides {
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub j1: Option<u32>,
    #[serde(default)]
    pub j2: Option<u32>,
    #[serde(default)]
    pub j0: Option<u32>,
}

impl PlanOverrides {
    /// Parse `a,j1,j2,j0`; empty fields keep the default.
    pub fn parse(text: &str) -> Result<Self> {
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!("plan must be a,j1,j2,j0; got {text:?}")));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| Error::Parse(format!("{s:?}: {e}")))
            }
        };
        let lvl = |s: &str| -> Result<Option<u32>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| Error::Parse(format!("{s:?}: {e}")))
            }
        };
        Ok(PlanOverrides { a: num(fields[0])?, j1: lvl(fields[1])?, j2: lvl(fields[2])?, j0: lvl(fields[3])? })
    }
}

fn r_n(n: usize, alpha: f64) -> f64 {
    alpha.max((n as f64).powf(-0.5))
}

fn floor_level(x: f64) -> u32 {
    (x + LEVEL_EPS).floor().max(0.0) as u32
}

/// Default plan: `j1 = ⌊log2 r_n^{-3/4}⌋`, `j2 = ⌊log2 r_n^{-2/3}⌋`, `a = ρ`,
/// `jtop = ⌊(1+a) log2 r_n^{-1}⌋`, `j0` as for `θ̃`.
pub fn default_level_plan(n: usize, alpha: f64, rho: f64) -> Result<LevelPlan> {
    if n < 4 {
        return Err(Error::param(format!("level plan needs n ≥ 4, got {n}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("α must be positive, got {alpha}")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::param(format!("ρ must lie in (0, 1), got {rho}")));
    }
    let r = r_n(n, alpha);
    let log_inv_r = -r.log2();
    Ok(LevelPlan {
        n,
        alpha,
        j0: base_level(n, alpha),
        a: rho,
        rho,
        j1: floor_level(0.75 * log_inv_r),
        j2: floor_level(log_inv_r * 2.0 / 3.0),
        jtop: floor_level((1.0 + rho) * log_inv_r),
        r_n: r,
    })
}

impl LevelPlan {
    pub fn with_overrides(mut self, o: &PlanOverrides) -> Result<Self> {
        if let Some(a) = o.a {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::param(format!("a must lie in (0, 1), got {a}")));
            }
            self.a = a;
            self.jtop = floor_level((1.0 + a) * -self.r_n.log2());
        }
        if let Some(j1) = o.j1 {
            self.j1 = j1;
        }
        if let Some(j2) = o.j2 {
            self.j2 = j2;
        }
        if let Some(j0) = o.j0 {
            self.j0 = j0;
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanCheck {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanDiagnostics {
    pub checks: Vec<PlanCheck>,
    pub notes: Vec<String>,
}

impl PlanDiagnostics {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&PlanCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Finite-`n` values of the seven quantities whose vanishing defines an
/// admissible plan. A check passes when its value is strictly below
/// `threshold` (default 1).
pub fn validate_level_plan(plan: &LevelPlan, n: usize, alpha: f64, threshold: Option<f64>) -> PlanDiagnostics {
    let threshold = threshold.unwrap_or(1.0);
    let r = r_n(n, alpha);
    let log_n = (n as f64).ln();
    let (j1, j2) = (plan.j1 as f64, plan.j2 as f64);
    let values = [
        ("alpha^(1-a) (log n)^2", alpha.powf(1.0 - plan.a) * log_n * log_n),
        ("r_n 2^(2 j2 - j1)", r * 2f64.powf(2.0 * j2 - j1)),
        ("r_n^-1 2^(j1/2) (alpha^2 log n + 1/n)", 2f64.powf(0.5 * j1) * (alpha * alpha * log_n + 1.0 / n as f64) / r),
        ("r_n 2^j1", r * 2f64.powf(j1)),
        ("r_n^-1 2^(-3 j1/2)", 2f64.powf(-1.5 * j1) / r),
        ("2^(j2 - j1)", 2f64.powf(j2 - j1)),
        ("r_n^-1 2^-(j1 + j2/2)", 2f64.powf(-(j1 + 0.5 * j2)) / r),
    ];
    let checks = values
        .into_iter()
        .map(|(name, value)| PlanCheck { name, value, threshold, pass: value < threshold })
        .collect();
    let mut notes = Vec::new();
    let log2_n = (n as f64).log2();
    if j1 > log2_n {
        notes.push(format!("j1 = {} exceeds log2 n = {log2_n:.2}: cells hold no samples", plan.j1));
    }
    if j2 + 1.0 > log2_n {
        notes.push(format!("j2 = {} leaves empty half-cells at n = {n}", plan.j2));
    }
    if plan.jtop as f64 > log2_n {
        notes.push(format!("jtop = {} exceeds log2 n = {log2_n:.2}", plan.jtop));
    }
    if plan.jtop < plan.j1 {
        notes.push(format!("jtop = {} below j1 = {}: R_n is an empty sum", plan.jtop, plan.j1));
    }
    if plan.n != n || plan.alpha != alpha {
        notes.push(format!("plan was built for n = {}, α = {}", plan.n, plan.alpha));
    }
    PlanDiagnostics { checks, notes }
}

/// Compensated estimator `θ̂_n(S) = Σ ĉ²_{j1} + R_n(S) + α·s·Σ ê²_{j0}`, where
/// `s` is +1, −1 or 0 for `g'` nonnegative, nonpositive or identically zero.
pub fn theta_hat(obs: &RoundedObservations, weight: &WeightFunction, plan: &LevelPlan) -> Result<EstimateResult> {
    let n = obs.n();
    if plan.n != n {
        return Err(Error::Mismatch(format!("plan built for n = {}, observations have n = {n}", plan.n)));
    }
    let rel = (plan.alpha - obs.alpha()).abs() / obs.alpha();
    if rel > 1e-12 {
        return Err(Error::Mismatch(format!("plan built for α = {}, observations have α = {}", plan.alpha, obs.alpha())));
    }
    check_level(n, plan.j1, false)?;
    check_level(n, plan.j2, true)?;
    check_level(n, plan.j0, false)?;
    warn_if_not_dyadic(n);

    let g_weights = level_weights(obs, |x| weight.g(x));
    let c_part = sum_sq(&scaled_cells(&g_weights, plan.j1));
    let q_hat = sum_sq(&scaled_details(&g_weights, plan.j2));
    let r_part: f64 = (plan.j1..=plan.jtop).map(|j| 2f64.powi(plan.j2 as i32 - j as i32) * q_hat).sum();

    let sign = match weight.sign_g_prime() {
        GPrimeSign::Nonnegative => 1.0,
        GPrimeSign::Nonpositive => -1.0,
        GPrimeSign::IdenticallyZero => 0.0,
    };
    let bias_part = if sign == 0.0 {
        0.0
    } else {
        let e_weights = level_weights(obs, |x| weight.sqrt_abs_gg_prime(x));
        sign * obs.alpha() * sum_sq(&scaled_cells(&e_weights, plan.j0))
    };

    Ok(EstimateResult {
        theta_hat: c_part + r_part + bias_part,
        estimator_kind: EstimatorKind::ThetaHatS,
        plan: Some(*plan),
        n,
        alpha: obs.alpha(),
        beta: obs.beta(),
        components: Some(Components { c_part, r_part, bias_part }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RvMode {
    Levels,
    LogLevels,
}

/// Realized volatility `Σ (ΔX)²` of the rounded levels or of their logs.
pub fn realized_volatility(obs: &RoundedObservations, mode: RvMode) -> Result<EstimateResult> {
    let (value, kind) = match mode {
        RvMode::Levels => (obs.pairs().map(|(a, b)| (b - a) * (b - a)).sum(), EstimatorKind::Rv),
        RvMode::LogLevels => {
            if let Some(v) = obs.values().iter().find(|v| **v <= 0.0) {
                return Err(Error::param(format!("log realized volatility needs positive prices, found {v}")));
            }
            let v: f64 = obs.pairs().map(|(a, b)| (b.ln() - a.ln()).powi(2)).sum();
            (v, EstimatorKind::RvLog)
        }
    };
    Ok(EstimateResult::plain(obs, kind, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Interval;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn abs_w() -> WeightFunction {
        WeightFunction::absolute(Interval::real_line())
    }

    /// Observations with prescribed signed increments starting at `start`.
    fn obs_from_increments(start: f64, incs: &[f64], alpha: f64) -> RoundedObservations {
        let mut v = vec![start];
        for d in incs {
            v.push(v.last().unwrap() + d);
        }
        RoundedObservations::from_raw_parts(v, alpha).unwrap()
    }

    #[test]
    fn c_hat_hand_example() {
        let obs = obs_from_increments(0.0, &[0.1, -0.1, 0.1, -0.1, 0.1, -0.1, 0.1, -0.1], 0.5);
        let c = c_hat(&obs, &abs_w(), 1).unwrap();
        // √(π/2)·(√2/√8)·4·0.1
        let expected = (std::f64::consts::PI / 2.0).sqrt() * (2f64.sqrt() / 8f64.sqrt()) * 0.4;
        assert_relative_eq!(expected, 0.250_662_827_463_100_1, max_relative = 1e-12);
        for v in c {
            assert_relative_eq!(v, expected, max_relative = 1e-12);
        }
        let flat = RoundedObservations::from_raw_parts(vec![2.0; 9], 0.5).unwrap();
        assert!(c_hat(&flat, &abs_w(), 2).unwrap().iter().all(|v| *v == 0.0));
        assert!(matches!(c_hat(&flat, &abs_w(), 4), Err(Error::Level { .. })));
    }

    #[test]
    fn d_hat_hand_examples() {
        let incs = [0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.2, 0.2];
        let obs = obs_from_increments(0.0, &incs, 0.1);
        let d1 = d_hat(&obs, &abs_w(), 1).unwrap();
        assert_abs_diff_eq!(d1[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d1[1], 0.0, epsilon = 1e-15);
        let d0 = d_hat(&obs, &abs_w(), 0).unwrap();
        let expected = (std::f64::consts::PI / 2.0).sqrt() / 8f64.sqrt() * 0.4;
        assert_relative_eq!(d0[0], expected, max_relative = 1e-12);
        assert_relative_eq!(expected, 0.177_245_385_090_551_6, max_relative = 1e-12);

        let equal = obs_from_increments(1.0, &[0.3; 16], 0.1);
        assert!(d_hat(&equal, &abs_w(), 2).unwrap().iter().all(|d| d.abs() < 1e-12));
        assert!(d_hat(&equal, &abs_w(), 3).unwrap().iter().all(|d| d.abs() < 1e-12));
        assert!(matches!(d_hat(&equal, &abs_w(), 4), Err(Error::Level { .. })));
    }

    #[test]
    fn e_hat_examples() {
        let obs = obs_from_increments(4.0, &[0.1, -0.1, 0.1, -0.1, 0.1, -0.1, 0.1, -0.1], 0.1);
        assert!(e_hat(&obs, &abs_w(), 1).unwrap().iter().all(|e| *e == 0.0));

        // previous levels alternate 4.0 / 4.1 with |Δ| = 0.1 throughout
        let levels = vec![4.0, 4.1, 4.0, 4.1, 4.0, 4.1, 4.0, 4.1, 4.0];
        let obs = RoundedObservations::from_raw_parts(levels, 0.1).unwrap();
        let e = e_hat(&obs, &WeightFunction::relative(), 1).unwrap();
        let s = (std::f64::consts::PI / 2.0).sqrt() * 0.5;
        let per_cell = s * 0.1 * 2.0 * (4f64.powf(-1.5) + 4.1f64.powf(-1.5));
        assert_relative_eq!(e[0], per_cell, max_relative = 1e-10);
        assert_relative_eq!(e[1], per_cell, max_relative = 1e-10);
        let flat = RoundedObservations::from_raw_parts(vec![4.0; 9], 0.1).unwrap();
        assert!(e_hat(&flat, &WeightFunction::relative(), 1).unwrap().iter().all(|e| *e == 0.0));
    }

    #[test]
    fn e_hat_constant_level_example() {
        // ê with |g g'|^{1/2} frozen at 4^{-3/2}: a custom weight that reports
        // the relative weight's value at 4 everywhere reproduces the hand value.
        use crate::model::{CustomWeight, GPrimeSign};
        use std::sync::Arc;
        let frozen = WeightFunction::custom(
            "frozen",
            CustomWeight {
                g: Arc::new(|_| 0.25),
                g_prime: Arc::new(|_| -1.0 / 16.0),
                sign: GPrimeSign::Nonpositive,
            },
            Interval::positive_half_line(),
        );
        let obs = obs_from_increments(4.0, &[0.1, -0.1, 0.1, -0.1, 0.1, -0.1, 0.1, -0.1], 0.1);
        let e = e_hat(&obs, &frozen, 1).unwrap();
        for v in e {
            assert_relative_eq!(v, 0.250_662_827_463_100_1 * 4f64.powf(-1.5), max_relative = 1e-12);
            assert_relative_eq!(v, 0.031_332_853_432_887_5, max_relative = 1e-9);
        }
    }

    #[test]
    fn theta_tilde_hand_example() {
        let obs = obs_from_increments(0.0, &[0.1, -0.1, 0.1, -0.1, 0.1, -0.1, 0.1, -0.1], 0.5);
        assert_eq!(base_level(8, 0.5), 1);
        let r = theta_tilde(&obs, &abs_w()).unwrap();
        assert_relative_eq!(r.theta_hat, std::f64::consts::PI * 0.04, max_relative = 1e-12);
        let flat = RoundedObservations::from_raw_parts(vec![0.0; 9], 0.5).unwrap();
        assert_eq!(theta_tilde(&flat, &abs_w()).unwrap().theta_hat, 0.0);
        let tiny = RoundedObservations::from_raw_parts(vec![0.0; 3], 0.5).unwrap();
        assert!(theta_tilde(&tiny, &abs_w()).is_err());
    }

    #[test]
    fn default_plan_examples() {
        let p = default_level_plan(1 << 16, 2f64.powi(-16), 0.5).unwrap();
        assert_eq!((p.j1, p.j2, p.j0, p.jtop), (6, 5, 8, 12));
        assert_eq!(p.r_n, 2f64.powi(-8));
        let p = default_level_plan(1 << 16, 2f64.powi(-4), 0.5).unwrap();
        assert_eq!((p.j1, p.j2, p.j0), (3, 2, 4));
        let p = default_level_plan(4, 1.0, 0.5).unwrap();
        assert_eq!((p.j0, p.j1, p.j2, p.jtop), (0, 0, 0, 0));
        assert_eq!(p.r_n, 1.0);
        assert!(default_level_plan(1 << 10, 0.0, 0.5).is_err());
        assert!(default_level_plan(1 << 10, 0.1, 1.0).is_err());
    }

    #[test]
    fn validate_plan_examples() {
        let n = 1 << 16;
        let alpha = 2f64.powi(-16);
        let p = default_level_plan(n, alpha, 0.5).unwrap();
        let d = validate_level_plan(&p, n, alpha, None);
        assert_eq!(d.checks.len(), 7);
        assert!(d.checks.iter().all(|c| c.value.is_finite()));
        assert_eq!(d.get("2^(j2 - j1)").unwrap().value, 0.5);
        assert!(d.all_pass(), "{d:?}");

        let collapsed = LevelPlan { j1: p.jtop, j2: p.jtop, ..p };
        let d = validate_level_plan(&collapsed, n, alpha, None);
        let c = d.get("2^(j2 - j1)").unwrap();
        assert_eq!(c.value, 1.0);
        assert!(!c.pass);

        let too_fine = LevelPlan { j1: 17, ..p };
        let d = validate_level_plan(&too_fine, n, alpha, None);
        assert!(d.notes.iter().any(|s| s.contains("no samples")));
    }

    #[test]
    fn theta_hat_absolute_and_flat() {
        let n = 256;
        let incs: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.02 } else { -0.01 }).collect();
        let obs = obs_from_increments(1.0, &incs, 0.01);
        let plan = default_level_plan(n, 0.01, 0.5).unwrap();
        let r = theta_hat(&obs, &abs_w(), &plan).unwrap();
        let comp = r.components.unwrap();
        assert_eq!(comp.bias_part, 0.0);
        assert_relative_eq!(r.theta_hat, comp.c_part + comp.r_part);

        let flat = RoundedObservations::from_raw_parts(vec![1.0; n + 1], 0.01).unwrap();
        let r = theta_hat(&flat, &WeightFunction::relative(), &plan).unwrap();
        assert_eq!(r.theta_hat, 0.0);

        let other = default_level_plan(n, 0.02, 0.5).unwrap();
        assert!(matches!(theta_hat(&obs, &abs_w(), &other), Err(Error::Mismatch(_))));
        let other_n = default_level_plan(2 * n, 0.01, 0.5).unwrap();
        assert!(matches!(theta_hat(&obs, &abs_w(), &other_n), Err(Error::Mismatch(_))));
    }

    #[test]
    fn theta_hat_relative_weight_has_negative_bias_part() {
        let n = 256;
        let incs: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.02 } else { -0.01 }).collect();
        let obs = obs_from_increments(1.0, &incs, 0.01);
        let plan = default_level_plan(n, 0.01, 0.5).unwrap();
        let r = theta_hat(&obs, &WeightFunction::relative(), &plan).unwrap();
        let comp = r.components.unwrap();
        assert!(comp.bias_part < 0.0);
        let e = e_hat(&obs, &WeightFunction::relative(), plan.j0).unwrap();
        assert_relative_eq!(comp.bias_part, -0.01 * sum_sq(&e), max_relative = 1e-12);
    }

    #[test]
    fn realized_volatility_examples() {
        let obs = obs_from_increments(1.0, &[0.1, -0.1, 0.2], 0.1);
        assert_relative_eq!(realized_volatility(&obs, RvMode::Levels).unwrap().theta_hat, 0.06, max_relative = 1e-12);
        let prices = RoundedObservations::from_raw_parts(vec![1.0, 1.1], 0.1).unwrap();
        let r = realized_volatility(&prices, RvMode::LogLevels).unwrap();
        assert_relative_eq!(r.theta_hat, 0.009_084_030_374_332_7, max_relative = 1e-9);
        let neg = RoundedObservations::from_raw_parts(vec![1.0, 0.0], 0.1).unwrap();
        assert!(realized_volatility(&neg, RvMode::LogLevels).is_err());
    }

    #[test]
    fn general_n_uses_exact_membership() {
        // n = 12, j = 2: cells hold i ∈ {1..3}, {4..6}, {7..9}, {10..12}
        let incs: Vec<f64> = (1..=12).map(|i| i as f64 * 0.01).collect();
        let obs = obs_from_increments(0.0, &incs, 0.01);
        let c = c_hat(&obs, &abs_w(), 2).unwrap();
        let scale = (std::f64::consts::PI / 2.0).sqrt() * 2.0 / 12f64.sqrt();
        assert_relative_eq!(c[0], scale * 0.06, max_relative = 1e-12);
        assert_relative_eq!(c[3], scale * (0.10 + 0.11 + 0.12), max_relative = 1e-12);
    }

    #[test]
    fn plan_overrides_parse_and_apply() {
        let o = PlanOverrides::parse("0.4,5,,2").unwrap();
        assert_eq!(o, PlanOverrides { a: Some(0.4), j1: Some(5), j2: None, j0: Some(2) });
        let p = default_level_plan(1 << 16, 2f64.powi(-16), 0.5).unwrap().with_overrides(&o).unwrap();
        assert_eq!((p.j1, p.j2, p.j0, p.jtop), (5, 5, 2, 11));
        assert!(PlanOverrides::parse("1,2,3").is_err());
        assert!(default_level_plan(1 << 10, 0.1, 0.5).unwrap().with_overrides(&PlanOverrides { a: Some(1.5), ..Default::default() }).is_err());
    }

    #[test]
    fn estimate_result_json_shape() {
        let obs = obs_from_increments(1.0, &[0.01; 64], 0.01);
        let plan = default_level_plan(64, 0.01, 0.5).unwrap();
        let r = theta_hat(&obs, &abs_w(), &plan).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["estimator_kind"], "theta_hat_S");
        assert!(json["components"]["R_part"].is_number());
        assert_eq!(json["plan"]["j1"], plan.j1);
    }
}
