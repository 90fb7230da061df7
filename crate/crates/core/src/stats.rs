//! Descriptive statistics and distribution helpers shared by the estimators
//! and the Monte Carlo harness.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose, StreamId};

pub const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF, accurate in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::param(format!("quantile level {p} not in (0, 1)")));
    }
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(std.inverse_cdf(p))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (denominator `len - 1`).
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `sample` and a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    if sample.is_empty() {
        return f64::NAN;
    }
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let len = v.len() as f64;
    v.iter().enumerate().fold(0.0_f64, |acc, (i, &x)| {
        let f = cdf(x);
        let above = (i as f64 + 1.0) / len - f;
        let below = f - i as f64 / len;
        acc.max(above).max(below)
    })
}

/// KS distance to `N(mean, std²)`. A zero `std` is treated as a point mass.
pub fn ks_distance_normal(sample: &[f64], mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        ks_distance(sample, |x| normal_cdf((x - mean) / std))
    } else {
        ks_distance(sample, |x| if x >= mean { 1.0 } else { 0.0 })
    }
}

/// Percentile bootstrap interval for the median.
pub fn bootstrap_median_ci(sample: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if sample.is_empty() || resamples == 0 {
        return Err(Error::param("bootstrap needs a sample and at least one resample"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param(format!("level must lie in (0, 1), got {level}")));
    }
    let mut rng = rng::stream(seed, StreamId::new(Purpose::Auxiliary, 0, 0, 0));
    let mut buf = vec![0.0; sample.len()];
    let mut medians: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = sample[rng.random_range(0..sample.len())];
            }
            median(&buf)
        })
        .collect();
    medians.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    let idx = |q: f64| ((q * (resamples - 1) as f64).round() as usize).min(resamples - 1);
    Ok((medians[idx(tail)], medians[idx(1.0 - tail)]))
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::param("slope fit needs at least two points"));
    }
    let len = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / len;
    let my = points.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) || !sxx.is_finite() {
        return Err(Error::param("slope fit needs at least two distinct abscissae"));
    }
    Ok(sxy / sxx)
}
