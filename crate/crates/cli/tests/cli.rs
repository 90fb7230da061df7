use std::path::Path;
use std::process::{Command, Output};

fn roundvol(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_roundvol"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("ROUNDVOL_THREADS", t),
        None => cmd.env_remove("ROUNDVOL_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const RATE_CONFIG: &str = r#"{
  "model": {"name": "constant", "params": [1.0], "x0": 0.0},
  "weight": {"name": "absolute"},
  "regime": {"gamma": 0.3333333333333333, "c_alpha": 1.0},
  "n_list": [128, 256, 512],
  "replications": 30,
  "seed": 42,
  "estimators": ["theta_tilde", "theta_hat_S", "rv"],
  "substeps": 2
}"#;

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("prices.csv");
    let out = roundvol(
        &["simulate", "--model", "black_scholes", "--params", "0.3", "--x0", "1.0", "--drift", "assumption_D", "--n", "1024", "--alpha", "0.001", "--seed", "7", "--out", path_str(&csv)],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.contains("# seed=7"));

    for est in ["tilde", "hat", "rv", "rvlog"] {
        let weight = if est == "rvlog" { "absolute" } else { "relative" };
        let out = roundvol(&["estimate", "--in", path_str(&csv), "--alpha", "0.001", "--weight", weight, "--estimator", est], None);
        assert!(out.status.success(), "{est}: {}", String::from_utf8_lossy(&out.stderr));
        let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let theta = json["theta_hat"].as_f64().unwrap();
        // θ = ∫ (0.3)² ds for the relative weight and log-RV
        if est != "rv" {
            assert!((theta - 0.09).abs() < 0.03, "{est}: {theta}");
        }
    }

    let out = roundvol(&["estimate", "--in", path_str(&csv), "--alpha", "0.001", "--estimator", "hat", "--plan", "0.5,4,3,"], None);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["plan"]["j1"], 4);
    assert_eq!(json["plan"]["j2"], 3);
}

#[test]
fn gamma_p_table() {
    let out = roundvol(&["gamma-p", "--p", "1", "--beta", "0.5,2,10", "--sigma", "1"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("beta,sigma,p,value"));
    for line in lines {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((v - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-9, "{line}");
    }
    let bad = roundvol(&["gamma-p", "--p", "-1", "--beta", "1", "--sigma", "1"], None);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn delta_beta_table_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("db.csv");
    let out = roundvol(&["delta-beta", "--beta", "1,2", "--sigma", "1", "--replications", "200", "--out", path_str(&csv)], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "beta,sigma,value,std_error");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("2,1,"));
}

#[test]
fn mc_rate_is_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", RATE_CONFIG);
    let mut reports = Vec::new();
    for (i, threads) in ["1", "1", "2"].iter().enumerate() {
        let out_path = dir.path().join(format!("r{i}.json"));
        let out = roundvol(&["mc-rate", "--config", path_str(&cfg), "--out", path_str(&out_path), "--omit-timing"], Some(threads));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push(std::fs::read(&out_path).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
    let json: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 9);
    assert!(json.get("wall_clock_seconds").is_none());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", &RATE_CONFIG.replace("[128, 256, 512]", "[128, 100, 512]"));
    let out = roundvol(&["mc-rate", "--config", path_str(&bad), "--out", path_str(&dir.path().join("x.json"))], None);
    assert_eq!(out.status.code(), Some(2));

    // Euler Black–Scholes with σ = 3 on 8 steps leaves the half-line most of the time
    let exiting = write_config(
        dir.path(),
        "exit.json",
        r#"{
  "model": {"name": "black_scholes", "params": [3.0], "x0": 1.0},
  "weight": {"name": "absolute"},
  "regime": {"gamma": 1.0, "c_alpha": 1.0},
  "n_list": [8, 16, 32],
  "replications": 50,
  "seed": 1,
  "estimators": ["theta_tilde"],
  "substeps": 1
}"#,
    );
    let out = roundvol(&["mc-rate", "--config", path_str(&exiting), "--out", path_str(&dir.path().join("y.json"))], None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = roundvol(&["estimate", "--in", path_str(&dir.path().join("missing.csv")), "--alpha", "0.1"], None);
    assert_eq!(out.status.code(), Some(2));
}
