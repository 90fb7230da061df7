//! Diffusion models `dX = σ(X) dW + a dt` and weight functions `g`.
//!
//! Both types are immutable once built and cheap to clone (custom
//! coefficient closures sit behind an `Arc`).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;

// Points farther out than this are treated as outside the range of S.
const MAX_SCALE_SEARCH: f64 = 1e12;
const SCALE_QUAD_TOL: f64 = 1e-12;
const SCALE_ROOT_TOL: f64 = 1e-12;

/// Open interval `(lower, upper)`; infinite endpoints are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "IntervalRepr", try_from = "IntervalRepr")]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

// JSON has no infinities, so unbounded ends are written as `null`.
#[derive(Serialize, Deserialize)]
struct IntervalRepr(Option<f64>, Option<f64>);

impl From<Interval> for IntervalRepr {
    fn from(i: Interval) -> Self {
        let fin = |v: f64| v.is_finite().then_some(v);
        IntervalRepr(fin(i.lower), fin(i.upper))
    }
}

impl TryFrom<IntervalRepr> for Interval {
    type Error = Error;
    fn try_from(r: IntervalRepr) -> Result<Self> {
        Interval::new(r.0.unwrap_or(f64::NEG_INFINITY), r.1.unwrap_or(f64::INFINITY))
    }
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return Err(Error::param(format!("({lower}, {upper}) is not a valid open interval")));
        }
        Ok(Interval { lower, upper })
    }

    pub fn real_line() -> Self {
        Interval { lower: f64::NEG_INFINITY, upper: f64::INFINITY }
    }

    pub fn positive_half_line() -> Self {
        Interval { lower: 0.0, upper: f64::INFINITY }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower < x && x < self.upper
    }

    fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain { x, lower: self.lower, upper: self.upper })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftMode {
    #[serde(rename = "zero")]
    Zero,
    /// `a(x) = ½ σ(x) σ'(x)`, under which `X_t = h(W_t)` for the inverse
    /// natural scale `h`.
    #[serde(rename = "assumption_D")]
    AssumptionD,
    /// State-dependent bounded drift supplied by a custom model.
    #[serde(rename = "custom_bounded")]
    CustomBounded,
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied coefficients. `sigma_prime` and `sigma_second` must be the
/// exact derivatives of `sigma`; nothing is differentiated numerically.
#[derive(Clone)]
pub struct CustomCoefficients {
    pub sigma: ScalarFn,
    pub sigma_prime: ScalarFn,
    pub sigma_second: ScalarFn,
    /// Required when the drift mode is `CustomBounded`.
    pub drift: Option<ScalarFn>,
}

impl fmt::Debug for CustomCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomCoefficients").field("drift", &self.drift.is_some()).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
enum Family {
    Constant { sigma0: f64 },
    BlackScholes { sigma0: f64 },
    Custom(CustomCoefficients),
}

/// Serializable description of a model: `{name, params, domain, x0, drift_mode}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Interval>,
    pub x0: f64,
    #[serde(default = "default_drift")]
    pub drift_mode: DriftMode,
}

fn default_drift() -> DriftMode {
    DriftMode::Zero
}

#[derive(Debug, Clone)]
pub struct VolatilityModel {
    name: String,
    params: Vec<f64>,
    domain: Interval,
    x0: f64,
    drift_mode: DriftMode,
    exact_transform_available: bool,
    family: Family,
}

/// `(σ(x), σ'(x), a(x))` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub sigma: f64,
    pub sigma_prime: f64,
    pub drift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Build one of the named families: `constant` (`σ(x) = σ0` on ℝ) or
/// `black_scholes` (`σ(x) = σ0·x` on `(0, ∞)`).
///
/// Custom models carry closures and are built with
/// [`VolatilityModel::custom`] instead.
pub fn make_model(name: &str, params: &[f64], x0: f64, drift_mode: DriftMode) -> Result<VolatilityModel> {
    let sigma0 = match params {
        [s] => *s,
        _ if name == "custom" => {
            return Err(Error::param("custom models supply closures; use VolatilityModel::custom"))
        }
        _ => return Err(Error::param(format!("{name} expects exactly one parameter σ0, got {}", params.len()))),
    };
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::param(format!("σ0 must be positive and finite, got {sigma0}")));
    }
    if drift_mode == DriftMode::CustomBounded {
        return Err(Error::param("custom_bounded drift needs a custom model"));
    }
    let (family, domain) = match name {
        "constant" => (Family::Constant { sigma0 }, Interval::real_line()),
        "black_scholes" => (Family::BlackScholes { sigma0 }, Interval::positive_half_line()),
        "custom" => return Err(Error::param("custom models supply closures; use VolatilityModel::custom")),
        other => return Err(Error::param(format!("unknown model family {other:?}"))),
    };
    if !domain.contains(x0) {
        return Err(Error::param(format!("x0 = {x0} outside ({}, {})", domain.lower, domain.upper)));
    }
    Ok(VolatilityModel {
        name: name.to_string(),
        params: params.to_vec(),
        domain,
        x0,
        drift_mode,
        exact_transform_available: true,
        family,
    })
}

impl VolatilityModel {
    pub fn constant(sigma0: f64, x0: f64) -> Result<Self> {
        make_model("constant", &[sigma0], x0, DriftMode::Zero)
    }

    pub fn black_scholes(sigma0: f64, x0: f64, drift_mode: DriftMode) -> Result<Self> {
        make_model("black_scholes", &[sigma0], x0, drift_mode)
    }

    /// Model with user-supplied coefficients on `domain`.
    ///
    /// `exact_transform_available` declares that the natural scale can be
    /// inverted numerically along a path; it only enables exact sampling when
    /// the drift mode is `AssumptionD`.
    pub fn custom(
        name: &str,
        coefficients: CustomCoefficients,
        domain: Interval,
        x0: f64,
        drift_mode: DriftMode,
        exact_transform_available: bool,
    ) -> Result<Self> {
        if !domain.contains(x0) {
            return Err(Error::param(format!("x0 = {x0} outside ({}, {})", domain.lower, domain.upper)));
        }
        if drift_mode == DriftMode::CustomBounded && coefficients.drift.is_none() {
            return Err(Error::param("custom_bounded drift mode needs a drift function"));
        }
        let s0 = (coefficients.sigma)(x0);
        if !(s0 > 0.0 && s0.is_finite()) {
            return Err(Error::param(format!("σ(x0) = {s0} is not positive")));
        }
        Ok(VolatilityModel {
            name: name.to_string(),
            params: Vec::new(),
            domain,
            x0,
            drift_mode,
            exact_transform_available,
            family: Family::Custom(coefficients),
        })
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let model = make_model(&spec.name, &spec.params, spec.x0, spec.drift_mode)?;
        if let Some(d) = spec.domain {
            if d != model.domain {
                return Err(Error::param(format!(
                    "{} is defined on ({}, {}); domain override not supported",
                    spec.name, model.domain.lower, model.domain.upper
                )));
            }
        }
        Ok(model)
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            name: self.name.clone(),
            params: self.params.clone(),
            domain: Some(self.domain),
            x0: self.x0,
            drift_mode: self.drift_mode,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn drift_mode(&self) -> DriftMode {
        self.drift_mode
    }

    pub fn exact_transform_available(&self) -> bool {
        self.exact_transform_available
    }

    /// `true` when `σ` does not depend on the state.
    pub fn is_constant(&self) -> bool {
        matches!(self.family, Family::Constant { .. })
    }

    pub(crate) fn has_closed_form_scale(&self) -> bool {
        !matches!(self.family, Family::Custom(_))
    }

    /// Whether `X_t = h(W_t)` is an exact representation of the path.
    /// For constant σ the zero drift and the `½σσ'` drift coincide.
    pub fn exact_path_available(&self) -> bool {
        self.exact_transform_available
            && (self.drift_mode == DriftMode::AssumptionD
                || (self.is_constant() && self.drift_mode == DriftMode::Zero))
    }

    /// σ without a domain check (callers on hot paths have already checked).
    pub fn sigma(&self, x: f64) -> f64 {
        match &self.family {
            Family::Constant { sigma0 } => *sigma0,
            Family::BlackScholes { sigma0 } => sigma0 * x,
            Family::Custom(c) => (c.sigma)(x),
        }
    }

    pub fn sigma_prime(&self, x: f64) -> f64 {
        match &self.family {
            Family::Constant { .. } => 0.0,
            Family::BlackScholes { sigma0 } => *sigma0,
            Family::Custom(c) => (c.sigma_prime)(x),
        }
    }

    pub fn sigma_second(&self, x: f64) -> f64 {
        match &self.family {
            Family::Constant { .. } | Family::BlackScholes { .. } => 0.0,
            Family::Custom(c) => (c.sigma_second)(x),
        }
    }

    pub fn drift(&self, x: f64) -> f64 {
        match self.drift_mode {
            DriftMode::Zero => 0.0,
            DriftMode::AssumptionD => 0.5 * self.sigma(x) * self.sigma_prime(x),
            DriftMode::CustomBounded => match &self.family {
                Family::Custom(CustomCoefficients { drift: Some(a), .. }) => a(x),
                _ => 0.0,
            },
        }
    }

    pub fn eval_coefficients(&self, x: f64) -> Result<Coefficients> {
        self.domain.check(x)?;
        Ok(Coefficients { sigma: self.sigma(x), sigma_prime: self.sigma_prime(x), drift: self.drift(x) })
    }

    /// Natural scale `S(x) = ∫_{x0}^{x} dy/σ(y)` (forward) or its inverse.
    pub fn scale_transform(&self, value: f64, direction: Direction) -> Result<f64> {
        match direction {
            Direction::Forward => {
                self.domain.check(value)?;
                Ok(match self.family {
                    Family::Constant { sigma0 } => (value - self.x0) / sigma0,
                    Family::BlackScholes { sigma0 } => (value / self.x0).ln() / sigma0,
                    Family::Custom(_) => self.scale_between(self.x0, value),
                })
            }
            Direction::Inverse => {
                if !value.is_finite() {
                    return Err(Error::Range(value));
                }
                match self.family {
                    Family::Constant { sigma0 } => Ok(self.x0 + sigma0 * value),
                    Family::BlackScholes { sigma0 } => {
                        let x = self.x0 * (sigma0 * value).exp();
                        if x > 0.0 && x.is_finite() {
                            Ok(x)
                        } else {
                            Err(Error::Range(value))
                        }
                    }
                    Family::Custom(_) => self.inverse_scale_from(value, self.x0, 0.0),
                }
            }
        }
    }

    fn scale_between(&self, a: f64, b: f64) -> f64 {
        adaptive_simpson(|y| 1.0 / self.sigma(y), a, b, SCALE_QUAD_TOL)
    }

    /// Solve `S(x) = target` starting from a point `start` with known
    /// `S(start) = s_start`. Brackets outward, then runs a safeguarded
    /// Newton iteration (`S' = 1/σ`) that falls back to bisection.
    pub(crate) fn inverse_scale_from(&self, target: f64, start: f64, s_start: f64) -> Result<f64> {
        if target == s_start {
            return Ok(start);
        }
        let up = target > s_start;
        let boundary = if up { self.domain.upper } else { self.domain.lower };
        let (mut lo, mut s_lo) = (start, s_start);
        let mut step = self.sigma(start).abs().max(1e-3) * (target - s_start).abs().max(1e-3);
        let mut hi;
        let mut s_hi;
        let mut iterations = 0;
        loop {
            iterations += 1;
            let mut cand = if up { lo + step } else { lo - step };
            if boundary.is_finite() && !((up && cand < boundary) || (!up && cand > boundary)) {
                cand = 0.5 * (lo + boundary);
            }
            if !cand.is_finite() || cand.abs() > MAX_SCALE_SEARCH {
                return Err(Error::Range(target));
            }
            let s_cand = s_lo + self.scale_between(lo, cand);
            if (up && s_cand >= target) || (!up && s_cand <= target) {
                hi = cand;
                s_hi = s_cand;
                break;
            }
            if iterations > 2000 || cand == lo || !s_cand.is_finite() {
                return Err(Error::Range(target));
            }
            lo = cand;
            s_lo = s_cand;
            step *= 2.0;
        }
        // invariant: target lies between s_lo and s_hi
        let mut x = lo + (hi - lo) * (target - s_lo) / (s_hi - s_lo);
        for _ in 0..200 {
            let s_x = s_lo + self.scale_between(lo, x);
            let resid = s_x - target;
            if resid.abs() <= SCALE_ROOT_TOL {
                return Ok(x);
            }
            if (resid > 0.0) == up {
                hi = x;
                s_hi = s_x;
            } else {
                lo = x;
                s_lo = s_x;
            }
            let newton = x - resid * self.sigma(x);
            let inside = if up { newton > lo && newton < hi } else { newton < lo && newton > hi };
            x = if inside { newton } else { 0.5 * (lo + hi) };
            if (hi - lo).abs() <= f64::EPSILON * x.abs().max(1.0) {
                return Ok(x);
            }
        }
        let _ = s_hi;
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GPrimeSign {
    Nonnegative,
    Nonpositive,
    IdenticallyZero,
}

/// User-supplied weight: `g`, `g'` and the declared sign of `g'`.
#[derive(Clone)]
pub struct CustomWeight {
    pub g: ScalarFn,
    pub g_prime: ScalarFn,
    pub sign: GPrimeSign,
}

impl fmt::Debug for CustomWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomWeight").field("sign", &self.sign).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
enum WeightKind {
    Absolute,
    Relative,
    Custom(CustomWeight),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Interval>,
}

/// Weight `g` of the target `∫ g(X)² σ(X)² ds`. Outside its domain both `g`
/// and `g'` are zero.
#[derive(Debug, Clone)]
pub struct WeightFunction {
    name: String,
    domain: Interval,
    kind: WeightKind,
}

/// `absolute` (g = 1) or `relative` (g = 1/x, domain must avoid 0).
pub fn make_weight(name: &str, domain: Interval) -> Result<WeightFunction> {
    let kind = match name {
        "absolute" => WeightKind::Absolute,
        "relative" => {
            if domain.lower < 0.0 && domain.upper > 0.0 {
                return Err(Error::param(format!(
                    "relative weight needs a domain avoiding 0, got ({}, {})",
                    domain.lower, domain.upper
                )));
            }
            WeightKind::Relative
        }
        "custom" => return Err(Error::param("custom weights supply closures; use WeightFunction::custom")),
        other => return Err(Error::param(format!("unknown weight {other:?}"))),
    };
    Ok(WeightFunction { name: name.to_string(), domain, kind })
}

impl WeightFunction {
    pub fn absolute(domain: Interval) -> Self {
        WeightFunction { name: "absolute".into(), domain, kind: WeightKind::Absolute }
    }

    pub fn relative() -> Self {
        WeightFunction { name: "relative".into(), domain: Interval::positive_half_line(), kind: WeightKind::Relative }
    }

    pub fn custom(name: &str, weight: CustomWeight, domain: Interval) -> Self {
        WeightFunction { name: name.to_string(), domain, kind: WeightKind::Custom(weight) }
    }

    /// Build from a spec, defaulting the domain to the model's state space.
    pub fn from_spec(spec: &WeightSpec, model_domain: Interval) -> Result<Self> {
        make_weight(&spec.name, spec.domain.unwrap_or(model_domain))
    }

    pub fn spec(&self) -> WeightSpec {
        WeightSpec { name: self.name.clone(), domain: Some(self.domain) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    #[inline]
    pub fn g(&self, x: f64) -> f64 {
        if !self.domain.contains(x) {
            return 0.0;
        }
        match &self.kind {
            WeightKind::Absolute => 1.0,
            WeightKind::Relative => 1.0 / x,
            WeightKind::Custom(c) => (c.g)(x),
        }
    }

    #[inline]
    pub fn g_prime(&self, x: f64) -> f64 {
        if !self.domain.contains(x) {
            return 0.0;
        }
        match &self.kind {
            WeightKind::Absolute => 0.0,
            WeightKind::Relative => -1.0 / (x * x),
            WeightKind::Custom(c) => (c.g_prime)(x),
        }
    }

    /// `|g(x) g'(x)|^{1/2}`.
    #[inline]
    pub fn sqrt_abs_gg_prime(&self, x: f64) -> f64 {
        if !self.domain.contains(x) {
            return 0.0;
        }
        match &self.kind {
            WeightKind::Absolute => 0.0,
            WeightKind::Relative => x.powf(-1.5),
            WeightKind::Custom(c) => ((c.g)(x) * (c.g_prime)(x)).abs().sqrt(),
        }
    }

    pub fn sign_g_prime(&self) -> GPrimeSign {
        match &self.kind {
            WeightKind::Absolute => GPrimeSign::IdenticallyZero,
            WeightKind::Relative => GPrimeSign::Nonpositive,
            WeightKind::Custom(c) => c.sign,
        }
    }

    pub fn is_absolute(&self) -> bool {
        matches!(self.kind, WeightKind::Absolute)
    }
}
