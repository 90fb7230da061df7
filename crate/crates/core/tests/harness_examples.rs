use roundvol::asymptotics::{delta_beta_converged, DeltaBetaOptions};
use roundvol::estimate::EstimatorKind;
use roundvol::harness::{replication_errors, run_clt_experiment, run_rate_experiment, ExperimentConfig, RegimeConfig};
use roundvol::model::{DriftMode, ModelSpec, WeightSpec};
use roundvol::stats::{bootstrap_median_ci, median};

fn config(gamma: f64, c_alpha: f64, n_list: Vec<usize>, replications: usize, estimators: Vec<EstimatorKind>) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelSpec { name: "constant".into(), params: vec![1.0], domain: None, x0: 0.0, drift_mode: DriftMode::Zero },
        weight: WeightSpec { name: "absolute".into(), domain: None },
        regime: RegimeConfig { gamma, c_alpha },
        n_list,
        replications,
        seed: 77,
        estimators,
        plan: None,
        substeps: 1,
        threads: None,
        delta_beta: None,
    }
}

#[test]
fn median_error_decreases_as_n_doubles() {
    for gamma in [1.0 / 3.0, 0.5, 1.0] {
        let cfg = config(gamma, 1.0, vec![1 << 10, 1 << 11, 1 << 12], 200, vec![EstimatorKind::ThetaTilde]);
        let r = run_rate_experiment(&cfg).unwrap();
        let med: Vec<f64> = r.rows.iter().map(|row| row.median_abs_error).collect();
        assert!(med.windows(2).all(|w| w[1] < w[0]), "γ = {gamma}: {med:?}");
    }
}

#[test]
fn realized_volatility_does_not_converge_under_large_ticks() {
    let cfg = config(1.0 / 3.0, 1.0, vec![1 << 10, 1 << 12, 1 << 14], 100, vec![EstimatorKind::Rv]);
    let r = run_rate_experiment(&cfg).unwrap();
    let slope = r.slope(EstimatorKind::Rv).unwrap();
    assert!(slope >= 0.0, "{slope}");
}

#[test]
fn fixed_beta_clt_variance_matches_delta_beta() {
    let mut cfg = config(0.5, 1.0, vec![1 << 12], 400, vec![EstimatorKind::ThetaHatS]);
    cfg.delta_beta = Some(DeltaBetaOptions { replications: 4000, seed: 9, ..DeltaBetaOptions::default() });
    let r = run_clt_experiment(&cfg).unwrap();
    let row = r.row(1 << 12, EstimatorKind::ThetaHatS).unwrap();
    let delta_one = delta_beta_converged(1.0, 1.0, &cfg.delta_beta.unwrap()).unwrap().value();
    let limit = row.limit_variance.unwrap();
    assert!((limit - 4.0 * delta_one).abs() < 1e-12);
    assert!((row.normalized_variance / limit - 1.0).abs() <= 0.25, "{} vs {limit}", row.normalized_variance);
}

#[test]
fn doubling_replications_is_stable() {
    let small = config(1.0, 1.0, vec![1 << 10], 200, vec![EstimatorKind::ThetaTilde]);
    let large = ExperimentConfig { replications: 400, ..small.clone() };
    let e_small: Vec<f64> = replication_errors(&small, 1 << 10).unwrap().remove(0).iter().map(|e| e.abs()).collect();
    let e_large: Vec<f64> = replication_errors(&large, 1 << 10).unwrap().remove(0).iter().map(|e| e.abs()).collect();
    let (lo, hi) = bootstrap_median_ci(&e_small, 0.95, 2000, 1).unwrap();
    assert!((median(&e_large) - median(&e_small)).abs() < hi - lo);
}
