//! Path simulation on `[0, 1]` and the rounding operator `x ↦ α⌊x/α⌋`.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Direction, VolatilityModel};
use crate::rng::{self, StreamId};
use crate::stats;

pub const DEFAULT_SUBSTEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `X_t = h(W_t)` with `h` the inverse natural scale anchored at `x0`.
    ExactScale,
    Euler,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::ExactScale => "exact_scale",
            Scheme::Euler => "euler",
        }
    }
}

/// A path sampled at `i/(n·substeps)`, `i = 0..=n·substeps`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    n: usize,
    substeps: usize,
    fine_values: Vec<f64>,
    seed: u64,
    scheme: Scheme,
    exited_at: Option<usize>,
}

impl PathSample {
    /// Wrap externally produced fine-grid values. `fine_values.len()` must be
    /// `n·substeps + 1`.
    pub fn from_fine_values(n: usize, substeps: usize, fine_values: Vec<f64>, seed: u64, scheme: Scheme) -> Result<Self> {
        if n < 1 || substeps < 1 {
            return Err(Error::param("n and substeps must be at least 1"));
        }
        if fine_values.len() != n * substeps + 1 {
            return Err(Error::param(format!(
                "expected {} fine values for n = {n}, substeps = {substeps}, got {}",
                n * substeps + 1,
                fine_values.len()
            )));
        }
        let exited_at = fine_values.iter().position(|v| !v.is_finite());
        Ok(PathSample { n, substeps, fine_values, seed, scheme, exited_at })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn fine_values(&self) -> &[f64] {
        &self.fine_values
    }

    /// Fine step `1/(n·substeps)`.
    pub fn fine_step(&self) -> f64 {
        1.0 / (self.n * self.substeps) as f64
    }

    /// `X_{i/n}`.
    pub fn value_at(&self, i: usize) -> f64 {
        self.fine_values[i * self.substeps]
    }

    pub fn coarse_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.fine_values.iter().step_by(self.substeps).copied()
    }

    pub fn exited(&self) -> bool {
        self.exited_at.is_some()
    }

    pub(crate) fn ensure_valid(&self) -> Result<()> {
        match self.exited_at {
            Some(step) => Err(Error::ExitedPath { step }),
            None => Ok(()),
        }
    }

    /// CSV with columns `index,time,value` over the fine grid, preceded by
    /// `# key=value` header lines.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let header = [
            ("n", self.n.to_string()),
            ("alpha", "none".to_string()),
            ("seed", self.seed.to_string()),
            ("scheme", self.scheme.as_str().to_string()),
            ("substeps", self.substeps.to_string()),
        ];
        let dt = self.fine_step();
        write_series(out, &header, self.fine_values.iter().enumerate().map(|(i, &v)| (i, i as f64 * dt, v)))
    }
}

/// Simulate on the fine grid with the root stream of `seed`.
///
/// Uses the exact scale representation when the model admits it, Euler–
/// Maruyama otherwise.
pub fn simulate_path(model: &VolatilityModel, n: usize, substeps: usize, seed: u64) -> Result<PathSample> {
    simulate_path_on_stream(model, n, substeps, seed, StreamId::root(), None)
}

/// As [`simulate_path`], drawing from an explicit stream. `scheme` forces a
/// scheme; forcing `ExactScale` on a model without an exact representation is
/// an error. Both schemes consume the same Gaussian increments in the same
/// order, so equal `(seed, stream)` gives the same Brownian path.
pub fn simulate_path_on_stream(
    model: &VolatilityModel,
    n: usize,
    substeps: usize,
    seed: u64,
    stream: StreamId,
    scheme: Option<Scheme>,
) -> Result<PathSample> {
    if n < 2 {
        return Err(Error::param(format!("n must be at least 2, got {n}")));
    }
    if substeps < 1 {
        return Err(Error::param("substeps must be at least 1"));
    }
    let scheme = match scheme {
        Some(Scheme::ExactScale) if !model.exact_path_available() => {
            return Err(Error::param(format!("model {} has no exact scale representation", model.name())))
        }
        Some(s) => s,
        None if model.exact_path_available() => Scheme::ExactScale,
        None => Scheme::Euler,
    };
    let steps = n * substeps;
    let dt = 1.0 / steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut rng = rng::stream(seed, stream);
    let mut values = Vec::with_capacity(steps + 1);
    let x0 = model.x0();
    values.push(x0);
    let mut exited_at = None;

    match scheme {
        Scheme::ExactScale => {
            let mut w = 0.0_f64;
            let mut prev = x0;
            for _ in 0..steps {
                let z: f64 = rng.sample(StandardNormal);
                let w_prev = w;
                w += sqrt_dt * z;
                let x = if model.has_closed_form_scale() {
                    model.scale_transform(w, Direction::Inverse)?
                } else {
                    model.inverse_scale_from(w, prev, w_prev)?
                };
                values.push(x);
                prev = x;
            }
        }
        Scheme::Euler => {
            let domain = model.domain();
            let mut x = x0;
            for step in 1..=steps {
                let z: f64 = rng.sample(StandardNormal);
                if exited_at.is_some() {
                    values.push(f64::NAN);
                    continue;
                }
                x += model.drift(x) * dt + model.sigma(x) * sqrt_dt * z;
                if domain.contains(x) {
                    values.push(x);
                } else {
                    exited_at = Some(step);
                    values.push(f64::NAN);
                }
            }
        }
    }
    Ok(PathSample { n, substeps, fine_values: values, seed, scheme, exited_at })
}

/// `α⌊x/α⌋`, audited so that the returned `α·k` satisfies `α·k ≤ x < α·(k+1)`.
pub fn round_to_grid(x: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("rounding step must be positive, got {alpha}")));
    }
    Ok(alpha * grid_index(x, alpha))
}

#[inline]
pub(crate) fn grid_index(x: f64, alpha: f64) -> f64 {
    let mut k = (x / alpha).floor();
    if alpha * k > x {
        k -= 1.0;
    } else if alpha * (k + 1.0) <= x {
        k += 1.0;
    }
    k
}

/// Observations `α_n⌊X_{i/n}/α_n⌋`, `i = 0..=n`, with `β_n = α_n √n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundedObservations {
    n: usize,
    alpha: f64,
    beta: f64,
    values: Vec<f64>,
}

impl RoundedObservations {
    /// Wrap values as given. No grid check is made; this is the constructor
    /// for hand-built or externally rounded data.
    pub fn from_raw_parts(values: Vec<f64>, alpha: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::param("need at least two observations"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param(format!("rounding step must be positive, got {alpha}")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite observation {v}")));
        }
        let n = values.len() - 1;
        Ok(RoundedObservations { n, alpha, beta: alpha * (n as f64).sqrt(), values })
    }

    /// Values that are supposed to lie on the `α` grid (e.g. decimal prices
    /// read from a file). Values within `1e-9·α` of a grid point are snapped
    /// to it; anything else is floored. Returns the observations and how many
    /// values were off-grid.
    pub fn from_grid_values(values: &[f64], alpha: f64) -> Result<(Self, usize)> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param(format!("rounding step must be positive, got {alpha}")));
        }
        let mut off_grid = 0;
        let snapped = values
            .iter()
            .map(|&x| {
                let q = x / alpha;
                let r = q.round();
                if (q - r).abs() <= 1e-9 {
                    alpha * r
                } else {
                    off_grid += 1;
                    alpha * grid_index(x, alpha)
                }
            })
            .collect();
        Ok((Self::from_raw_parts(snapped, alpha)?, off_grid))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(X_{(i-1)/n}, X_{i/n})` for `i = 1..=n`.
    pub(crate) fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn write_csv<W: Write>(&self, out: W, seed: Option<u64>, scheme: Option<Scheme>) -> Result<()> {
        let header = [
            ("n", self.n.to_string()),
            ("alpha", format!("{}", self.alpha)),
            ("seed", seed.map_or("none".into(), |s| s.to_string())),
            ("scheme", scheme.map_or("none", Scheme::as_str).to_string()),
        ];
        let dt = 1.0 / self.n as f64;
        write_series(out, &header, self.values.iter().enumerate().map(|(i, &v)| (i, i as f64 * dt, v)))
    }
}

fn write_series<W: Write>(
    mut out: W,
    header: &[(&str, String)],
    rows: impl Iterator<Item = (usize, f64, f64)>,
) -> Result<()> {
    for (k, v) in header {
        writeln!(out, "# {k}={v}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "time", "value"]).map_err(csv_err)?;
    for (i, t, v) in rows {
        w.serialize((i, t, v)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Read a price series from CSV. `#` lines are comments; if a header row is
/// present it is skipped. The value is taken from the `value` column when
/// there is one, otherwise from the last column.
pub fn read_price_csv<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut column: Option<usize> = None;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        if record.is_empty() {
            continue;
        }
        if line == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            column = record.iter().position(|f| f.eq_ignore_ascii_case("value"));
            continue;
        }
        let idx = column.unwrap_or(record.len() - 1);
        let field = record.get(idx).ok_or_else(|| Error::Parse(format!("row {line} has no column {idx}")))?;
        let v = field.parse::<f64>().map_err(|e| Error::Parse(format!("row {line}: {field:?}: {e}")))?;
        out.push(v);
    }
    Ok(out)
}

/// Observe a path on the `α` grid at times `i/n`.
pub fn observe_rounded(path: &PathSample, alpha: f64) -> Result<RoundedObservations> {
    path.ensure_valid()?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("rounding step must be positive, got {alpha}")));
    }
    let values = path.coarse_values().map(|x| alpha * grid_index(x, alpha)).collect();
    RoundedObservations::from_raw_parts(values, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionalPartDiagnostic {
    pub ks_distance: f64,
    /// Proportions in 20 equal bins over `[0, 1)`.
    pub histogram: Vec<f64>,
}

/// Distribution of the fractional parts `{X_{i/n}/α}`, `i = 1..=n`, compared
/// with Uniform[0, 1].
pub fn fractional_part_diagnostic(path: &PathSample, alpha: f64) -> Result<FractionalPartDiagnostic> {
    path.ensure_valid()?;
    if path.n() < 100 {
        return Err(Error::param(format!("diagnostic needs n ≥ 100, got {}", path.n())));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("rounding step must be positive, got {alpha}")));
    }
    let fracs: Vec<f64> = path
        .coarse_values()
        .skip(1)
        .map(|x| {
            let q = x / alpha;
            (q - q.floor()).clamp(0.0, 1.0 - f64::EPSILON)
        })
        .collect();
    let mut histogram = vec![0.0; 20];
    for &f in &fracs {
        histogram[((f * 20.0) as usize).min(19)] += 1.0;
    }
    let total = fracs.len() as f64;
    histogram.iter_mut().for_each(|h| *h /= total);
    let ks_distance = stats::ks_distance(&fracs, |x| x.clamp(0.0, 1.0));
    Ok(FractionalPartDiagnostic { ks_distance, histogram })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DriftMode;
    use approx::assert_abs_diff_eq;

    #[test]
    fn round_to_grid_examples() {
        assert_eq!(round_to_grid(2.7, 0.5).unwrap(), 2.5);
        assert_eq!(round_to_grid(-0.3, 0.25).unwrap(), -0.5);
        assert_eq!(round_to_grid(1.0, 0.25).unwrap(), 1.0);
        assert!(round_to_grid(1.0, 0.0).is_err());
        assert!(round_to_grid(1.0, -0.1).is_err());
    }

    #[test]
    fn rounding_audit_handles_representation_error() {
        // 0.3/0.1 evaluates to 2.9999999999999996
        let r = round_to_grid(0.3, 0.1).unwrap();
        assert!(r <= 0.3 && 0.3 < r + 0.1);
        for i in -500..500 {
            let x = i as f64 * 0.01;
            let r = round_to_grid(x, 0.01).unwrap();
            assert!(r <= x && x < r + 0.01, "{x} -> {r}");
        }
    }

    #[test]
    fn constant_model_brownian_increments() {
        let m = VolatilityModel::constant(1.0, 0.0).unwrap();
        let p = simulate_path(&m, 1000, 4, 11).unwrap();
        assert_eq!(p.fine_values()[0], 0.0);
        assert_eq!(p.fine_values().len(), 4001);
        assert_eq!(p.scheme(), Scheme::ExactScale);
        let dt = p.fine_step();
        let incs: Vec<f64> = p.fine_values().windows(2).map(|w| (w[1] - w[0]) / dt.sqrt()).collect();
        let m1 = stats::mean(&incs);
        let v = stats::sample_variance(&incs);
        assert!(m1.abs() < 4.0 / (incs.len() as f64).sqrt(), "{m1}");
        assert!((v - 1.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn black_scholes_exact_is_exponential_of_w() {
        let m = VolatilityModel::black_scholes(0.3, 1.0, DriftMode::AssumptionD).unwrap();
        let p = simulate_path(&m, 64, 4, 5).unwrap();
        assert_eq!(p.scheme(), Scheme::ExactScale);
        // recover W from the constant model driven by the same stream
        let bm = simulate_path(&VolatilityModel::constant(1.0, 0.0).unwrap(), 64, 4, 5).unwrap();
        for (x, w) in p.fine_values().iter().zip(bm.fine_values()) {
            assert_abs_diff_eq!(*x, (0.3 * w).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = VolatilityModel::black_scholes(0.3, 1.0, DriftMode::Zero).unwrap();
        let a = simulate_path(&m, 128, 8, 99).unwrap();
        let b = simulate_path(&m, 128, 8, 99).unwrap();
        assert_eq!(a.scheme(), Scheme::Euler);
        assert!(a.fine_values().iter().zip(b.fine_values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = simulate_path(&m, 128, 8, 100).unwrap();
        assert_ne!(a.fine_values(), c.fine_values());
    }

    #[test]
    fn euler_exit_is_flagged_and_refused() {
        let m = VolatilityModel::black_scholes(3.0, 0.05, DriftMode::Zero).unwrap();
        let exited = (0..50)
            .map(|s| simulate_path(&m, 16, 1, s).unwrap())
            .find(|p| p.exited())
            .expect("large-step Euler leaves (0, ∞) for some seed");
        assert!(matches!(observe_rounded(&exited, 0.01), Err(Error::ExitedPath { .. })));
        assert_eq!(exited.fine_values().len(), 17);
    }

    #[test]
    fn forcing_exact_scheme_requires_representation() {
        let m = VolatilityModel::black_scholes(0.3, 1.0, DriftMode::Zero).unwrap();
        assert!(simulate_path_on_stream(&m, 16, 1, 1, StreamId::root(), Some(Scheme::ExactScale)).is_err());
        assert!(simulate_path(&m, 1, 1, 1).is_err());
    }

    #[test]
    fn observe_rounded_examples() {
        let p = PathSample::from_fine_values(2, 1, vec![0.0, 0.13, 0.26], 0, Scheme::Euler).unwrap();
        let o = observe_rounded(&p, 0.1).unwrap();
        assert_eq!(o.values().len(), 3);
        assert_abs_diff_eq!(o.values()[0], 0.0);
        assert_abs_diff_eq!(o.values()[1], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(o.values()[2], 0.2, epsilon = 1e-15);

        let m = VolatilityModel::constant(1.0, 0.0).unwrap();
        let path = simulate_path(&m, 64, 2, 3).unwrap();
        let fine = observe_rounded(&path, 1e-12).unwrap();
        for (r, x) in fine.values().iter().zip(path.coarse_values()) {
            assert!((r - x).abs() <= 1e-12);
        }

        let p4 = PathSample::from_fine_values(4, 1, vec![0.0; 5], 0, Scheme::Euler).unwrap();
        assert_eq!(observe_rounded(&p4, 0.5).unwrap().beta(), 1.0);
    }

    #[test]
    fn fractional_parts_of_fine_brownian_path_are_uniform() {
        let m = VolatilityModel::constant(1.0, 0.0).unwrap();
        let p = simulate_path(&m, 10_000, 1, 2024).unwrap();
        let d = fractional_part_diagnostic(&p, 0.01).unwrap();
        assert!(d.ks_distance <= 0.05, "{}", d.ks_distance);
        assert_eq!(d.histogram.len(), 20);
        assert_abs_diff_eq!(d.histogram.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fractional_parts_degenerate_cases() {
        let flat = PathSample::from_fine_values(200, 1, vec![3.0; 201], 0, Scheme::Euler).unwrap();
        let d = fractional_part_diagnostic(&flat, 1.0).unwrap();
        assert_abs_diff_eq!(d.ks_distance, 1.0, epsilon = 1e-12);

        let m = VolatilityModel::constant(1.0, 0.0).unwrap();
        let p = simulate_path(&m, 1000, 1, 8).unwrap();
        let (lo, hi) = p.coarse_values().fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(x), b.max(x)));
        let d = fractional_part_diagnostic(&p, 100.0 * (hi - lo)).unwrap();
        // the whole path spans 1% of one tick: at most two adjacent bins (mod 1) are hit
        let hit = d.histogram.iter().filter(|h| **h > 0.0).count();
        assert!(hit <= 2, "{:?}", d.histogram);
        assert!(d.ks_distance > 0.45, "{}", d.ks_distance);
        assert!(fractional_part_diagnostic(&simulate_path(&m, 50, 1, 8).unwrap(), 0.1).is_err());
    }

    #[test]
    fn csv_round_trip_of_observations() {
        let o = RoundedObservations::from_raw_parts(vec![1.0, 1.25, 1.0, 1.5], 0.25).unwrap();
        let mut buf = Vec::new();
        o.write_csv(&mut buf, Some(7), Some(Scheme::ExactScale)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# n=3\n# alpha=0.25\n# seed=7\n# scheme=exact_scale\nindex,time,value\n"));
        let back = read_price_csv(text.as_bytes()).unwrap();
        assert_eq!(back, o.values());
        let single = read_price_csv("100.01\n100.02\n100.00\n".as_bytes()).unwrap();
        let (obs, off) = RoundedObservations::from_grid_values(&single, 0.01).unwrap();
        assert_eq!(off, 0);
        assert_abs_diff_eq!(obs.values()[1], 100.02, epsilon = 1e-12);
    }
}
