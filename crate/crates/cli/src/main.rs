use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use roundvol::asymptotics::{gamma_p, DeltaBetaOptions, DeltaBetaTable};
use roundvol::estimate::{
    default_level_plan, realized_volatility, theta_hat, theta_tilde, validate_level_plan, PlanOverrides, RvMode,
};
use roundvol::harness::{run_clt_experiment, run_rate_experiment, with_thread_pool, ExperimentConfig, ExperimentReport};
use roundvol::model::{make_model, make_weight, DriftMode};
use roundvol::simulate::{observe_rounded, read_price_csv, simulate_path, RoundedObservations, DEFAULT_SUBSTEPS};
use roundvol::Error;

#[derive(Parser)]
#[command(name = "roundvol", version, about = "Integrated volatility from rounded high-frequency samples")]
struct Cli {
    /// Worker threads (overrides ROUNDVOL_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Drift {
    Zero,
    #[value(name = "assumption_D")]
    AssumptionD,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightArg {
    Absolute,
    Relative,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Tilde,
    Hat,
    Rv,
    Rvlog,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a path and write its rounded observations as CSV.
    Simulate {
        #[arg(long)]
        model: String,
        /// Comma-separated model parameters, e.g. the volatility.
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        params: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        x0: f64,
        #[arg(long, value_enum, default_value = "zero")]
        drift: Drift,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_SUBSTEPS)]
        substeps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the unrounded fine path here.
        #[arg(long)]
        latent_out: Option<PathBuf>,
    },
    /// Estimate integrated volatility from a price CSV.
    Estimate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "absolute")]
        weight: WeightArg,
        #[arg(long, value_enum, default_value = "hat")]
        estimator: EstimatorArg,
        /// Level overrides `a,j1,j2,j0`; leave a field empty to keep its default.
        #[arg(long)]
        plan: Option<String>,
        /// ρ of the default plan.
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
    },
    /// Rate-of-convergence Monte Carlo experiment.
    McRate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leave the wall-clock field out of the report.
        #[arg(long)]
        omit_timing: bool,
    },
    /// Limit-law Monte Carlo experiment.
    McClt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        omit_timing: bool,
    },
    /// Tabulate Δ_β by Monte Carlo.
    DeltaBeta {
        #[arg(long, value_delimiter = ',', required = true)]
        beta: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        sigma: Vec<f64>,
        #[arg(long, default_value_t = 2000)]
        replications: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate γ_p(σ, β).
    GammaP {
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        beta: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        sigma: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn read_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(Error::from).with_context(|| format!("parsing {}", path.display()))?;
    Ok(config)
}

fn write_report(mut report: ExperimentReport, out: &Path, omit_timing: bool) -> anyhow::Result<()> {
    if omit_timing {
        report.wall_clock_seconds = None;
    }
    let mut json = report.to_json()?;
    json.push('\n');
    std::fs::write(out, json).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { model, params, x0, drift, n, alpha, seed, substeps, out, latent_out } => {
            let drift = match drift {
                Drift::Zero => DriftMode::Zero,
                Drift::AssumptionD => DriftMode::AssumptionD,
            };
            let model = make_model(&model, &params, x0, drift)?;
            let path = simulate_path(&model, n, substeps, seed)?;
            if let Some(step) = path.exited().then(|| path.fine_values().iter().position(|v| v.is_nan())).flatten() {
                return Err(Error::ExitedPath { step }.into());
            }
            let obs = observe_rounded(&path, alpha)?;
            obs.write_csv(output(Some(&out))?, Some(seed), Some(path.scheme()))?;
            if let Some(p) = latent_out {
                path.write_csv(output(Some(&p))?)?;
            }
            log::info!("wrote {} observations (β = {:.4}) to {}", obs.n(), obs.beta(), out.display());
        }
        Command::Estimate { input, alpha, weight, estimator, plan, rho } => {
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let values = read_price_csv(file)?;
            let (obs, off_grid) = RoundedObservations::from_grid_values(&values, alpha)?;
            if off_grid > 0 {
                log::warn!("{off_grid} prices were not on the α-grid and were rounded down");
            }
            let weight = match weight {
                WeightArg::Absolute => make_weight("absolute", roundvol::model::Interval::real_line())?,
                WeightArg::Relative => roundvol::WeightFunction::relative(),
            };
            let result = match estimator {
                EstimatorArg::Tilde => theta_tilde(&obs, &weight)?,
                EstimatorArg::Rv => realized_volatility(&obs, RvMode::Levels)?,
                EstimatorArg::Rvlog => realized_volatility(&obs, RvMode::LogLevels)?,
                EstimatorArg::Hat => {
                    let mut lp = default_level_plan(obs.n(), alpha, rho)?;
                    if let Some(text) = plan {
                        lp = lp.with_overrides(&PlanOverrides::parse(&text)?)?;
                    }
                    let diag = validate_level_plan(&lp, obs.n(), alpha, None);
                    for c in diag.checks.iter().filter(|c| !c.pass) {
                        log::warn!("plan check {} = {:.4} is not below {}", c.name, c.value, c.threshold);
                    }
                    for note in &diag.notes {
                        log::warn!("{note}");
                    }
                    theta_hat(&obs, &weight, &lp)?
                }
            };
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::McRate { config, out, omit_timing } => {
            let mut cfg = read_config(&config)?;
            cfg.threads = cli.threads.or(cfg.threads);
            write_report(run_rate_experiment(&cfg)?, &out, omit_timing)?;
        }
        Command::McClt { config, out, omit_timing } => {
            let mut cfg = read_config(&config)?;
            cfg.threads = cli.threads.or(cfg.threads);
            write_report(run_clt_experiment(&cfg)?, &out, omit_timing)?;
        }
        Command::DeltaBeta { beta, sigma, replications, seed, out } => {
            let opts = DeltaBetaOptions { replications, seed, ..DeltaBetaOptions::default() };
            let mut w = output(out.as_deref())?;
            let mut first = true;
            for &b in &beta {
                let table = with_thread_pool(cli.threads, || DeltaBetaTable::compute(b, &sigma, &opts))??;
                let mut buf = Vec::new();
                table.write_csv(&mut buf)?;
                let text = String::from_utf8(buf)?;
                let body = if first { text.as_str() } else { text.split_once('\n').map_or("", |(_, rest)| rest) };
                w.write_all(body.as_bytes())?;
                first = false;
            }
            w.flush()?;
        }
        Command::GammaP { p, beta, sigma, out } => {
            for &v in p.iter().chain(&beta) {
                if !(v > 0.0) {
                    bail!(Error::Parameter(format!("p and β must be positive, got {v}")));
                }
            }
            if let Some(s) = sigma.iter().find(|s| !(**s >= 0.0)) {
                bail!(Error::Parameter(format!("σ must be nonnegative, got {s}")));
            }
            let mut w = output(out.as_deref())?;
            writeln!(w, "beta,sigma,p,value")?;
            for &pp in &p {
                for &b in &beta {
                    for &s in &sigma {
                        writeln!(w, "{b},{s},{pp},{}", gamma_p(s, b, pp))?;
                    }
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Aborted(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
