//! Monte Carlo experiments: convergence rates and limit laws.
//!
//! Replication `r` at sample size `n` draws its path from stream
//! `(Path, attempt, log2 n, r)`; a path that leaves the state space is
//! redrawn with the next `attempt`. Per-replication results are collected in
//! index order and reduced sequentially, so a report depends only on the
//! configuration and seed, never on the thread count.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{limit_std, DeltaBetaOptions, DeltaBetaTable, Regime, RegimeSpec};
use crate::error::{Error, Result};
use crate::estimate::{default_level_plan, realized_volatility, theta_hat, theta_tilde, EstimatorKind, PlanOverrides, RvMode};
use crate::model::{ModelSpec, VolatilityModel, WeightFunction, WeightSpec};
use crate::rng::{Purpose, StreamId};
use crate::simulate::{observe_rounded, simulate_path_on_stream, PathSample, DEFAULT_SUBSTEPS};
use crate::stats::{ks_distance_normal, mean, median, ols_slope, sample_variance};
use crate::wavelet::theta_oracle;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "ROUNDVOL_THREADS";

/// Largest fraction of replications at one `n` whose first path may exit.
pub const MAX_EXIT_RATE: f64 = 0.10;

const MAX_ATTEMPTS: u8 = 64;

/// Tick-size family `α_n = c_α n^{-γ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub gamma: f64,
    pub c_alpha: f64,
}

impl RegimeConfig {
    pub fn alpha(&self, n: usize) -> f64 {
        self.c_alpha * (n as f64).powf(-self.gamma)
    }

    /// `ρ = a = min(γ, 0.9)`.
    pub fn rho(&self) -> f64 {
        self.gamma.min(0.9)
    }

    pub fn regime(&self) -> Result<RegimeSpec> {
        RegimeSpec::from_exponent(self.gamma, self.c_alpha)
    }
}

fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub weight: WeightSpec,
    pub regime: RegimeConfig,
    pub n_list: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanOverrides>,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Worker threads; not echoed in reports since it cannot change them.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    /// Monte Carlo settings for `Δ_β` in the fixed-β regime.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_beta: Option<DeltaBetaOptions>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return Err(Error::param("n_list is empty"));
        }
        if let Some(n) = self.n_list.iter().find(|n| !n.is_power_of_two() || **n < 4) {
            return Err(Error::param(format!("n_list entries must be powers of two ≥ 4, got {n}")));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("n_list must be strictly ascending"));
        }
        if self.replications == 0 {
            return Err(Error::param("replications must be positive"));
        }
        if self.replications > u32::MAX as usize {
            return Err(Error::param("too many replications"));
        }
        if self.estimators.is_empty() {
            return Err(Error::param("no estimators requested"));
        }
        if self.substeps == 0 {
            return Err(Error::param("substeps must be positive"));
        }
        self.regime.regime()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub estimator: EstimatorKind,
    pub replications: usize,
    /// Paths discarded for leaving the state space and redrawn.
    pub exits: usize,
    pub mean_error: f64,
    pub median_abs_error: f64,
    /// Median of estimate/target.
    pub median_ratio: f64,
    pub rate: f64,
    /// Sample variance of `rate·(estimate − target)`.
    pub normalized_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_limit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_fitted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeEntry {
    pub estimator: EstimatorKind,
    /// OLS slope of log2 median |error| against log2 n; `None` if any median is 0.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    Rate,
    Clt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: ExperimentMode,
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
    pub slopes: Vec<SlopeEntry>,
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl ExperimentReport {
    pub fn row(&self, n: usize, estimator: EstimatorKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.n == n && r.estimator == estimator)
    }

    pub fn slope(&self, estimator: EstimatorKind) -> Option<f64> {
        self.slopes.iter().find(|s| s.estimator == estimator).and_then(|s| s.slope)
    }

    /// Pretty JSON; byte-identical for equal configurations once the
    /// wall-clock field is cleared.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV of the rows with a `#`-prefixed header line for gnuplot.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("# n alpha beta estimator median_abs_error normalized_variance\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{} {} {} {} {} {}\n",
                r.n,
                r.alpha,
                r.beta,
                r.estimator.as_str(),
                r.median_abs_error,
                r.normalized_variance
            ));
        }
        out
    }
}

/// OLS slope of `(log2 n, log2 median|error|)` points.
pub fn fit_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    ols_slope(points)
}

/// Thread count from the argument, else `ROUNDVOL_THREADS`, else rayon's default.
pub fn resolve_threads(requested: Option<usize>) -> Option<usize> {
    requested.filter(|t| *t > 0).or_else(|| {
        std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|t| *t > 0)
    })
}

/// Run `f` on a dedicated pool sized by [`resolve_threads`].
pub fn with_thread_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = resolve_threads(threads) {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::param(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

struct Setup {
    model: VolatilityModel,
    weight: WeightFunction,
    abs_weight: WeightFunction,
    rel_weight: Option<WeightFunction>,
}

impl Setup {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = VolatilityModel::from_spec(&config.model)?;
        let weight = WeightFunction::from_spec(&config.weight, model.domain())?;
        let abs_weight = WeightFunction::absolute(model.domain());
        let rel_weight = if config.estimators.contains(&EstimatorKind::RvLog) {
            if model.domain().lower < 0.0 {
                return Err(Error::param("rv_log needs a model living on the positive half-line"));
            }
            Some(WeightFunction::relative())
        } else {
            None
        };
        Ok(Setup { model, weight, abs_weight, rel_weight })
    }

    /// Target of each estimator: `θ` for the configured weight, `∫σ²` for RV
    /// and `∫(σ/x)²` for log-RV.
    fn target_weight(&self, kind: EstimatorKind) -> &WeightFunction {
        match kind {
            EstimatorKind::ThetaTilde | EstimatorKind::ThetaHatS => &self.weight,
            EstimatorKind::Rv => &self.abs_weight,
            EstimatorKind::RvLog => self.rel_weight.as_ref().expect("built when rv_log is requested"),
        }
    }
}

struct Replication {
    path: PathSample,
    exits: usize,
    estimates: Vec<f64>,
    targets: Vec<f64>,
}

fn draw_path(config: &ExperimentConfig, model: &VolatilityModel, n: usize, rep: usize) -> Result<(PathSample, usize)> {
    let major = n.ilog2() as u16;
    for attempt in 0..MAX_ATTEMPTS {
        let id = StreamId::new(Purpose::Path, attempt, major, rep as u32);
        let path = simulate_path_on_stream(model, n, config.substeps, config.seed, id, None)?;
        if !path.exited() {
            return Ok((path, attempt as usize));
        }
    }
    Err(Error::Aborted(format!("replication {rep} at n = {n} exited {MAX_ATTEMPTS} times")))
}

fn run_replication(config: &ExperimentConfig, setup: &Setup, n: usize, rep: usize) -> Result<Replication> {
    let (path, exits) = draw_path(config, &setup.model, n, rep)?;
    let alpha = config.regime.alpha(n);
    let obs = observe_rounded(&path, alpha)?;
    let mut estimates = Vec::with_capacity(config.estimators.len());
    let mut targets = Vec::with_capacity(config.estimators.len());
    for &kind in &config.estimators {
        let value = match kind {
            EstimatorKind::ThetaTilde => theta_tilde(&obs, &setup.weight)?.theta_hat,
            EstimatorKind::ThetaHatS => {
                let mut plan = default_level_plan(n, alpha, config.regime.rho())?;
                if let Some(o) = &config.plan {
                    plan = plan.with_overrides(o)?;
                }
                theta_hat(&obs, &setup.weight, &plan)?.theta_hat
            }
            EstimatorKind::Rv => realized_volatility(&obs, RvMode::Levels)?.theta_hat,
            EstimatorKind::RvLog => realized_volatility(&obs, RvMode::LogLevels)?.theta_hat,
        };
        estimates.push(value);
        targets.push(theta_oracle(&path, setup.target_weight(kind), &setup.model)?);
    }
    Ok(Replication { path, exits, estimates, targets })
}

fn run_level(config: &ExperimentConfig, setup: &Setup, n: usize) -> Result<Vec<Replication>> {
    let reps: Vec<Replication> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(config, setup, n, r))
        .collect::<Result<Vec<_>>>()?;
    let exited_first = reps.iter().filter(|r| r.exits > 0).count();
    let rate = exited_first as f64 / config.replications as f64;
    if rate > MAX_EXIT_RATE {
        return Err(Error::Aborted(format!(
            "{exited_first} of {} paths at n = {n} left the state space ({:.1}% > {:.0}%)",
            config.replications,
            100.0 * rate,
            100.0 * MAX_EXIT_RATE
        )));
    }
    if exited_first > 0 {
        log::info!("n = {n}: {exited_first} exited paths redrawn");
    }
    Ok(reps)
}

/// Per-replication errors `estimate − target` at one `n`, one vector per
/// configured estimator, in replication order.
pub fn replication_errors(config: &ExperimentConfig, n: usize) -> Result<Vec<Vec<f64>>> {
    let setup = Setup::new(config)?;
    let reps = with_thread_pool(config.threads, || run_level(config, &setup, n))??;
    Ok((0..config.estimators.len())
        .map(|idx| reps.iter().map(|r| r.estimates[idx] - r.targets[idx]).collect())
        .collect())
}

fn base_row(config: &ExperimentConfig, n: usize, idx: usize, kind: EstimatorKind, reps: &[Replication], rate: f64) -> ReportRow {
    let errors: Vec<f64> = reps.iter().map(|r| r.estimates[idx] - r.targets[idx]).collect();
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let ratios: Vec<f64> = reps.iter().map(|r| r.estimates[idx] / r.targets[idx]).collect();
    let normalized: Vec<f64> = errors.iter().map(|e| rate * e).collect();
    let alpha = config.regime.alpha(n);
    ReportRow {
        n,
        alpha,
        beta: alpha * (n as f64).sqrt(),
        estimator: kind,
        replications: reps.len(),
        exits: reps.iter().map(|r| r.exits).sum(),
        mean_error: mean(&errors),
        median_abs_error: median(&abs),
        median_ratio: median(&ratios),
        rate,
        normalized_variance: sample_variance(&normalized),
        limit_variance: None,
        ks_limit: None,
        ks_fitted: None,
    }
}

fn slopes(config: &ExperimentConfig, rows: &[ReportRow]) -> Result<Vec<SlopeEntry>> {
    config
        .estimators
        .iter()
        .map(|&kind| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.estimator == kind)
                .map(|r| ((r.n as f64).log2(), r.median_abs_error.log2()))
                .collect();
            let slope = if pts.len() >= 2 && pts.iter().all(|p| p.1.is_finite()) { Some(fit_log_slope(&pts)?) } else { None };
            Ok(SlopeEntry { estimator: kind, slope })
        })
        .collect()
}

/// Rate experiment: median |estimate − θ| per `n` and its log2-slope.
pub fn run_rate_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    if config.n_list.len() < 3 {
        return Err(Error::param("a rate experiment needs at least three sample sizes"));
    }
    let setup = Setup::new(config)?;
    let regime = config.regime.regime()?;
    let rows = with_thread_pool(config.threads, || -> Result<Vec<ReportRow>> {
        let mut rows = Vec::new();
        for &n in &config.n_list {
            let reps = run_level(config, &setup, n)?;
            let rate = regime.rate(n, config.regime.alpha(n));
            for (idx, &kind) in config.estimators.iter().enumerate() {
                rows.push(base_row(config, n, idx, kind, &reps, rate));
            }
        }
        Ok(rows)
    })??;
    let slopes = slopes(config, &rows)?;
    Ok(ExperimentReport {
        mode: ExperimentMode::Rate,
        config: config.clone(),
        rows,
        slopes,
        notes: Vec::new(),
        wall_clock_seconds: Some(start.elapsed().as_secs_f64()),
    })
}

/// CLT experiment: variance of `rate(n)·(θ̂ − θ)` against the limit variance,
/// and KS distances to the limit normal and to the fitted normal.
pub fn run_clt_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    if !config.estimators.contains(&EstimatorKind::ThetaHatS) {
        return Err(Error::param("a CLT experiment needs theta_hat_S among the estimators"));
    }
    if config.replications < 200 {
        return Err(Error::param(format!("a CLT experiment needs at least 200 replications, got {}", config.replications)));
    }
    let setup = Setup::new(config)?;
    let regime = config.regime.regime()?;
    let hat_idx = config.estimators.iter().position(|k| *k == EstimatorKind::ThetaHatS).expect("checked above");
    let constant_sigma = setup.model.is_constant();
    let mut notes = Vec::new();
    if !constant_sigma {
        notes.push(
            "σ is not constant: the limit is a mixed normal, so only the variance is compared (against the \
             replication mean of the conditional limit variance) and KS distances to the limit are suppressed"
                .to_string(),
        );
    }

    let rows = with_thread_pool(config.threads, || -> Result<Vec<ReportRow>> {
        let mut rows = Vec::new();
        for &n in &config.n_list {
            let reps = run_level(config, &setup, n)?;
            let table = match regime.regime {
                Regime::BetaFixed(beta) => Some(delta_beta_table(config, &setup, beta, &reps)?),
                _ => None,
            };
            let cond_vars = reps
                .iter()
                .map(|r| limit_std(&regime, &r.path, &setup.weight, &setup.model, table.as_ref()).map(|s| s * s))
                .collect::<Result<Vec<f64>>>()?;
            let limit_var = mean(&cond_vars);
            let rate = regime.rate(n, config.regime.alpha(n));
            for (idx, &kind) in config.estimators.iter().enumerate() {
                let mut row = base_row(config, n, idx, kind, &reps, rate);
                if idx == hat_idx {
                    let normalized: Vec<f64> = reps.iter().map(|r| rate * (r.estimates[idx] - r.targets[idx])).collect();
                    row.limit_variance = Some(limit_var);
                    row.ks_fitted = Some(ks_distance_normal(&normalized, mean(&normalized), sample_variance(&normalized).sqrt()));
                    if constant_sigma {
                        row.ks_limit = Some(ks_distance_normal(&normalized, 0.0, limit_var.sqrt()));
                    }
                }
                rows.push(row);
            }
        }
        Ok(rows)
    })??;
    let slopes = slopes(config, &rows)?;
    Ok(ExperimentReport {
        mode: ExperimentMode::Clt,
        config: config.clone(),
        rows,
        slopes,
        notes,
        wall_clock_seconds: Some(start.elapsed().as_secs_f64()),
    })
}

fn delta_beta_table(config: &ExperimentConfig, setup: &Setup, beta: f64, reps: &[Replication]) -> Result<DeltaBetaTable> {
    let opts = config.delta_beta.unwrap_or(DeltaBetaOptions { seed: config.seed, ..DeltaBetaOptions::default() });
    let sigmas: Vec<f64> = if setup.model.is_constant() {
        vec![setup.model.sigma(setup.model.x0())]
    } else {
        let (lo, hi) = reps
            .iter()
            .flat_map(|r| r.path.fine_values().iter().map(|&x| setup.model.sigma(x)))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s), b.max(s)));
        if hi - lo <= 1e-12 * hi.abs() {
            vec![lo]
        } else {
            (0..=16).map(|i| lo + (hi - lo) * i as f64 / 16.0).collect()
        }
    };
    DeltaBetaTable::compute(beta, &sigmas, &opts)
}
