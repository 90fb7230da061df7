//! Haar system on `[0, 1]` and ground-truth quantities computed from the
//! unrounded fine path.
//!
//! Supports are left-open and right-closed: cell `k` at level `j` is
//! `(k2^{-j}, (k+1)2^{-j}]`, so `s = 0` belongs to no cell and `s = 1` to the
//! last one. The wavelet `ψ_{jk}` is `-2^{j/2}` on the left half-cell
//! `(k2^{-j}, (k+½)2^{-j}]` and `+2^{j/2}` on the right half-cell.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{VolatilityModel, WeightFunction};
use crate::quad::trapezoid_uniform;
use crate::simulate::PathSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaarIndex {
    j: u32,
    k: u64,
}

impl HaarIndex {
    pub fn new(j: u32, k: u64) -> Result<Self> {
        if j > 62 || k >= 1u64 << j {
            return Err(Error::param(format!("translate {k} out of range for level {j}")));
        }
        Ok(HaarIndex { j, k })
    }

    pub fn j(&self) -> u32 {
        self.j
    }

    pub fn k(&self) -> u64 {
        self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaarKind {
    Indicator,
    Wavelet,
}

/// `2^{j/2}·1_{jk}(s)` (indicator) or `ψ_{jk}(s)` (wavelet).
pub fn haar_eval(index: HaarIndex, s: f64, kind: HaarKind) -> f64 {
    let scale = 2f64.powf(0.5 * index.j as f64);
    let t = s * 2f64.powi(index.j as i32) - index.k as f64;
    if !(t > 0.0 && t <= 1.0) {
        return 0.0;
    }
    match kind {
        HaarKind::Indicator => scale,
        HaarKind::Wavelet if t <= 0.5 => -scale,
        HaarKind::Wavelet => scale,
    }
}

/// Cell at level `j` containing the sample time `i/n`, `i ≥ 1`:
/// `k` with `k·n < i·2^j ≤ (k+1)·n`.
#[inline]
pub(crate) fn cell_of(i: usize, n: usize, j: u32) -> usize {
    (((i as u128) << j) - 1).div_euclid(n as u128) as usize
}

/// Haar coefficients of a function: `c` at the base level `j0` and `d` for
/// every level `j0..=jmax`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub j0: u32,
    pub jmax: u32,
    pub c: Vec<f64>,
    /// `d[j - j0][k]`.
    pub d: Vec<Vec<f64>>,
}

impl CoefficientTable {
    pub fn d_level(&self, j: u32) -> Option<&[f64]> {
        j.checked_sub(self.j0).and_then(|i| self.d.get(i as usize)).map(Vec::as_slice)
    }

    /// `Σ_k c² + Σ_{j0 ≤ j ≤ upto} Σ_k d²`.
    pub fn energy(&self, upto: u32) -> f64 {
        let base: f64 = self.c.iter().map(|c| c * c).sum();
        let detail: f64 = self
            .d
            .iter()
            .take((upto.saturating_sub(self.j0) + 1).min(self.d.len() as u32) as usize)
            .flat_map(|lvl| lvl.iter())
            .map(|d| d * d)
            .sum();
        if upto < self.j0 {
            base
        } else {
            base + detail
        }
    }

    /// CSV rows `level,translate,kind,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let e = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(["level", "translate", "kind", "value"]).map_err(e)?;
        for (k, c) in self.c.iter().enumerate() {
            w.serialize((self.j0, k, "indicator", c)).map_err(e)?;
        }
        for (off, lvl) in self.d.iter().enumerate() {
            for (k, d) in lvl.iter().enumerate() {
                w.serialize((self.j0 + off as u32, k, "wavelet", d)).map_err(e)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Haar coefficients of the function whose values on the uniform grid
/// `i/N`, `i = 0..=N`, are `samples`, by trapezoid quadrature.
///
/// Each fine interval `((i-1)/N, i/N]` is attributed to the half-cell that
/// contains its right end, which is exact when `N` is a multiple of
/// `2^{jmax+1}`.
pub fn coefficients_from_samples(samples: &[f64], j0: u32, jmax: u32) -> Result<CoefficientTable> {
    if jmax < j0 {
        return Err(Error::param(format!("jmax = {jmax} below j0 = {j0}")));
    }
    if samples.len() < 2 {
        return Err(Error::param("need at least two samples"));
    }
    let intervals = samples.len() - 1;
    let required = 1usize << jmax;
    if jmax >= 40 || required > intervals {
        return Err(Error::Resolution { required, available: intervals });
    }
    let finest = jmax + 1;
    if intervals % (1usize << finest) != 0 {
        log::warn!("{intervals} fine intervals not a multiple of 2^{finest}; half-cells are misaligned");
    }
    let h = 1.0 / intervals as f64;
    let mut sums = vec![0.0; 1usize << finest];
    for i in 1..=intervals {
        sums[cell_of(i, intervals, finest)] += 0.5 * h * (samples[i - 1] + samples[i]);
    }
    // sums at level `finest`; coarsen one level at a time
    let mut details: Vec<Vec<f64>> = Vec::with_capacity((jmax - j0 + 1) as usize);
    let mut level = finest;
    while level > j0 {
        let j = level - 1;
        let scale = 2f64.powf(0.5 * j as f64);
        let coarse: Vec<f64> = sums.chunks_exact(2).map(|p| p[0] + p[1]).collect();
        let d: Vec<f64> = sums.chunks_exact(2).map(|p| scale * (p[1] - p[0])).collect();
        details.push(d);
        sums = coarse;
        level = j;
    }
    details.reverse();
    let scale = 2f64.powf(0.5 * j0 as f64);
    let c = sums.into_iter().map(|s| scale * s).collect();
    Ok(CoefficientTable { j0, jmax, c, d: details })
}

fn integrand(path: &PathSample, weight: &WeightFunction, model: &VolatilityModel) -> Vec<f64> {
    path.fine_values().iter().map(|&x| weight.g(x) * model.sigma(x)).collect()
}

/// True coefficients `c_{j0 k}` and `d_{jk}` of `s ↦ g(X_s)σ(X_s)`.
pub fn oracle_coefficients(
    path: &PathSample,
    weight: &WeightFunction,
    model: &VolatilityModel,
    j0: u32,
    jmax: u32,
) -> Result<CoefficientTable> {
    path.ensure_valid()?;
    coefficients_from_samples(&integrand(path, weight, model), j0, jmax)
}

/// `θ = ∫_0^1 g(X_s)² σ(X_s)² ds` by trapezoid on the fine grid.
pub fn theta_oracle(path: &PathSample, weight: &WeightFunction, model: &VolatilityModel) -> Result<f64> {
    path.ensure_valid()?;
    let sq: Vec<f64> = integrand(path, weight, model).into_iter().map(|v| v * v).collect();
    Ok(trapezoid_uniform(&sq, path.fine_step()))
}
