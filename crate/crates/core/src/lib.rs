//! Integrated volatility of a diffusion observed at high frequency with
//! round-off error.
//!
//! The crate simulates rounded diffusion samples, computes Haar-wavelet
//! estimators of `∫ g(X_s)² σ(X_s)² ds` from the rounded data, and provides
//! the numerical ingredients (long-run variances, p-variation functionals,
//! limit standard deviations) needed to check rates and limit laws by
//! Monte Carlo.
//!
//! Module map:
//! - [`model`]: diffusion coefficients, weight functions `g`, natural scale.
//! - [`simulate`]: path generation and the rounding operator.
//! - [`wavelet`]: Haar system and ground-truth coefficients from a fine path.
//! - [`estimate`]: estimators computable from rounded observations only.
//! - [`asymptotics`]: limit-law constants and confidence intervals.
//! - [`harness`]: Monte Carlo experiments and their reports.

pub mod asymptotics;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod model;
pub mod quad;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod wavelet;

pub use error::{Error, Result};
pub use estimate::{EstimateResult, EstimatorKind, LevelPlan};
pub use model::{VolatilityModel, WeightFunction};
pub use simulate::{PathSample, RoundedObservations};
