//! `mcbound`: evaluate, simulate and verify matrix concentration bounds for
//! finite Markov chains from JSON experiment configs.
//!
//! Exit status: 0 when everything passes, 1 on a verification failure,
//! 2 on a configuration or input error.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcbound::apps::{covariance_experiment, pca_experiment, CovPcaResult, VectorFunctionTable};
use mcbound::bounds::*;
use mcbound::chain::{center_and_norms, mixing_time, v_ergodicity_kappa, FiniteChain, InitialDistribution, MatrixFunctionTable};
use mcbound::matrix::loewner_leq;
use mcbound::mc::{empirical_lp, simulate_martingale, simulate_sums, with_worker_pool, SimulationConfig};
use mcbound::poisson::{solve_poisson, PoissonMethod, PoissonSolution, DEFAULT_SERIES_TOL};
use mcbound::verify::{check_inequality, wilson_upper, write_csv, Lhs, VerificationReport, Z_99};
use serde_json::{json, Value};

use config::{Loaded, Operation};

#[derive(Debug)]
pub enum CliError {
    Config(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
        }
    }
}

impl From<mcbound::Error> for CliError {
    fn from(e: mcbound::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

#[derive(Parser)]
#[command(name = "mcbound", version, about = "Matrix concentration bounds for finite Markov chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the bound formulas for the configured chain and table.
    Bounds(Common),
    /// Simulate sums and their martingale part; write per-trial statistics.
    Simulate(Common),
    /// Compare empirical moments and tails with the bounds.
    Verify(Common),
    /// Covariance estimation from Markovian samples.
    AppsCov(Common),
    /// Leading-eigenvector estimation from Markovian samples.
    AppsPca(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Constant override such as `C_R1=90`; repeatable.
    #[arg(long = "override", value_name = "NAME=VALUE")]
    overrides: Vec<String>,
}

struct Outcome {
    report: Value,
    csv: Vec<u8>,
    pass: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (op, common) = match cli.command {
        Command::Bounds(c) => (Operation::Bounds, c),
        Command::Simulate(c) => (Operation::Simulate, c),
        Command::Verify(c) => (Operation::Verify, c),
        Command::AppsCov(c) => (Operation::Cov, c),
        Command::AppsPca(c) => (Operation::Pca, c),
    };
    match with_worker_pool(|| run(op, &common)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("mcbound: {e}");
            ExitCode::from(2)
        }
    }
}

fn registry(loaded: &Loaded, overrides: &[String]) -> Result<ConstantsRegistry, CliError> {
    let mut reg = ConstantsRegistry::default();
    for (name, value) in &loaded.config.constants {
        reg.set(name, *value).map_err(|e| CliError::Config(format!("constants: {e}")))?;
    }
    for item in overrides {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--override expects NAME=VALUE, got `{item}`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("--override {name}: `{value}` is not a number")))?;
        reg.set(name.trim(), value).map_err(|e| CliError::Config(format!("--override: {e}")))?;
    }
    Ok(reg)
}

fn run(op: Operation, common: &Common) -> Result<bool, CliError> {
    let loaded = config::load(&common.config)?;
    if let Some(declared) = loaded.config.operation {
        if declared != op {
            return Err(CliError::Config(format!(
                "config declares operation `{}` but `{}` was requested",
                declared.name(),
                op.name()
            )));
        }
    }
    let reg = registry(&loaded, &common.overrides)?;
    let seed = common.seed.unwrap_or(loaded.config.seed);
    loaded.chain.validate_init(&loaded.config.init)?;
    if let Some(d) = loaded.config.delta {
        if !(d > 0.0 && d < 1.0) {
            return Err(CliError::Config(format!("delta must lie in (0, 1), got {d}")));
        }
    }

    let outcome = match op {
        Operation::Bounds => run_bounds(&loaded, &reg)?,
        Operation::Simulate => run_simulate(&loaded, seed)?,
        Operation::Verify => run_verify(&loaded, &reg, seed)?,
        Operation::Cov | Operation::Pca => run_apps(&loaded, &reg, seed, op == Operation::Pca)?,
    };

    let mut report = json!({
        "operation": op.name(),
        "config": common.config.display().to_string(),
        "seed": seed,
        "constants": reg,
        "pass": outcome.pass,
    });
    if let (Value::Object(dst), Value::Object(src)) = (&mut report, outcome.report) {
        dst.extend(src);
    }
    fs::create_dir_all(&common.out)?;
    let out = |given: &Option<PathBuf>, default: String| common.out.join(given.clone().unwrap_or_else(|| default.into()));
    let json_path = out(&loaded.config.output.json, format!("{}_report.json", op.name()));
    let csv_path = out(&loaded.config.output.csv, format!("{}_summary.csv", op.name()));
    write_file(&json_path, serde_json::to_string_pretty(&report).expect("serializable").as_bytes())?;
    write_file(&csv_path, &outcome.csv)?;
    Ok(outcome.pass)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    f.write_all(bytes)?;
    Ok(())
}

/// Everything the bound evaluators need from the chain and the table.
struct Prepared {
    table: MatrixFunctionTable,
    t_mix: usize,
    kappa: Option<f64>,
    solution: PoissonSolution,
    effective_dim: Option<f64>,
    summary: Value,
}

fn prepare(loaded: &Loaded) -> Result<Prepared, CliError> {
    let chain = &loaded.chain;
    let raw = loaded.table.matrix_table(chain)?;
    let shift = raw.mean(chain.pi()).spectral_norm();
    let table = center_and_norms(&raw, chain, &[])?;
    let profile = mixing_time(chain, None)?;
    let t_mix = profile.t_mix.expect("certified");
    let v_profile = match chain.lyapunov() {
        Some(v) => Some(v_ergodicity_kappa(chain, v, t_mix, None)?),
        None => None,
    };
    let kappa = v_profile.as_ref().and_then(|p| p.kappa);
    let solution = solve_poisson(chain, &table, PoissonMethod::Direct, DEFAULT_SERIES_TOL)?;
    let sigma_norm = solution.sigma.spectral_norm();
    let effective_dim = match &loaded.config.dimension_free {
        None => None,
        Some(df) => {
            if df.upsilon.dim() != table.dim() {
                return Err(CliError::Config(format!(
                    "upsilon has dimension {} but the table has {}",
                    df.upsilon.dim(),
                    table.dim()
                )));
            }
            for (z, f) in table.values().iter().enumerate() {
                let tol = 1e-8 * df.upsilon.spectral_norm().max(1.0);
                if !loewner_leq(&f.square(), &df.upsilon, tol)?.holds {
                    return Err(CliError::Config(format!("F({z})^2 is not dominated by upsilon")));
                }
            }
            Some(dimension_factor(&df.upsilon, t_mix, sigma_norm.max(f64::MIN_POSITIVE))?)
        }
    };
    let summary = json!({
        "chain": {
            "n_states": chain.n_states(),
            "labels": chain.labels(),
            "pi": chain.pi(),
            "t_mix": t_mix,
            "mixing_certificate": profile.certificate,
            "mixing_horizon": profile.horizon,
            "kappa": kappa,
            "v_certificate": v_profile.as_ref().and_then(|p| p.certificate.clone()),
            "pi_v": chain.pi_v(),
        },
        "table": {
            "dim": table.dim(),
            "centering_shift": shift,
            "sup_norm": table.sup_norm(),
            "sigma_norm": sigma_norm,
            "poisson_residual": solution.residual,
            "sigma_identity_gap": solution.sigma_gap(),
            "effective_dim": effective_dim,
        },
    });
    Ok(Prepared {
        table,
        t_mix,
        kappa,
        solution,
        effective_dim,
        summary,
    })
}

fn xi_v(chain: &FiniteChain, init: &InitialDistribution) -> Option<f64> {
    let v = chain.lyapunov()?;
    match init {
        InitialDistribution::Stationary => None,
        InitialDistribution::State(z) => Some(v[*z]),
        InitialDistribution::Weights(w) => Some(w.iter().zip(v).map(|(a, b)| a * b).sum()),
    }
}

fn bound_input(loaded: &Loaded, prep: &Prepared, p: f64, n: usize) -> BoundInput {
    let chain = &loaded.chain;
    let mut input = BoundInput::new(p, n, prep.table.dim() as f64);
    input.effective_dim = prep.effective_dim;
    input.t_mix = prep.t_mix;
    input.kappa = prep.kappa;
    input.pi_v = chain.pi_v();
    input.xi_v = xi_v(chain, &loaded.config.init);
    input.sup_norm = Some(prep.table.sup_norm());
    input.v_norm = chain.lyapunov().map(|v| prep.table.weighted_norm(v, 1.0 / p));
    input.sigma_norm = Some(prep.solution.sigma.spectral_norm());
    input.delta = loaded.config.delta;
    input
}

fn evaluate_all(loaded: &Loaded, prep: &Prepared, input: &BoundInput, reg: &ConstantsRegistry) -> Result<Vec<BoundReport>, CliError> {
    let stationary = loaded.config.init == InitialDistribution::Stationary;
    let mut out = vec![
        BoundReport::new(Theorem::CrudeRosenthal, input, reg, crude_rosenthal_rhs(input, reg)?),
        BoundReport::new(Theorem::MarkovRosenthal, input, reg, markov_rosenthal_rhs(input, stationary, false, reg)?),
    ];
    if prep.effective_dim.is_some() {
        let mut r = BoundReport::new(Theorem::MarkovRosenthal, input, reg, markov_rosenthal_rhs(input, stationary, true, reg)?);
        r.warnings.push("dimension-free variant".into());
        out.push(r);
    }
    if input.delta.is_some() {
        out.push(BoundReport::new(Theorem::Hoeffding, input, reg, hoeffding_rhs(input, reg)?));
        out.push(BoundReport::new(Theorem::Bernstein, input, reg, bernstein_rhs(input, reg)?));
    }
    if input.kappa.is_some() {
        out.push(BoundReport::new(Theorem::GeoVCrude, input, reg, geo_v_rosenthal_rhs(input, true, reg)?));
        out.push(BoundReport::new(Theorem::GeoVRosenthal, input, reg, geo_v_rosenthal_rhs(input, false, reg)?));
    }
    Ok(out)
}

fn grid(loaded: &Loaded) -> Vec<(f64, usize)> {
    let mut g = Vec::new();
    for n in loaded.config.n.to_vec() {
        for p in loaded.config.p.to_vec() {
            g.push((p, n));
        }
    }
    g
}

fn run_bounds(loaded: &Loaded, reg: &ConstantsRegistry) -> Result<Outcome, CliError> {
    let prep = prepare(loaded)?;
    let mut csv = String::from("theorem,n,p,delta,value\n");
    let mut bounds = Vec::new();
    for (p, n) in grid(loaded) {
        let input = bound_input(loaded, &prep, p, n);
        for r in evaluate_all(loaded, &prep, &input, reg)? {
            let id = if r.warnings.iter().any(|w| w == "dimension-free variant") {
                format!("{}_dimension_free", r.theorem.id())
            } else {
                r.theorem.id().to_string()
            };
            csv.push_str(&format!(
                "{id},{n},{p},{},{}\n",
                input.delta.map(|d| d.to_string()).unwrap_or_default(),
                r.value
            ));
            bounds.push(r);
        }
    }
    let mut report = prep.summary;
    report["bounds"] = json!(bounds);
    Ok(Outcome {
        report,
        csv: csv.into_bytes(),
        pass: true,
    })
}

fn sim_config(loaded: &Loaded, n: usize, seed: u64) -> SimulationConfig {
    let mut cfg = SimulationConfig::new(n, loaded.config.trials, seed);
    cfg.init = loaded.config.init.clone();
    cfg
}

fn run_simulate(loaded: &Loaded, seed: u64) -> Result<Outcome, CliError> {
    let prep = prepare(loaded)?;
    let mut csv = String::from("n,trial,sup_s,sup_m,qv,sup_x\n");
    let mut runs = Vec::new();
    for n in loaded.config.n.to_vec() {
        let stats = simulate_martingale(&loaded.chain, &prep.solution, &sim_config(loaded, n, seed))?;
        let (sup_m, qv, sup_x) = (
            stats.sup_m.as_ref().expect("martingale run"),
            stats.qv.as_ref().expect("martingale run"),
            stats.sup_x.as_ref().expect("martingale run"),
        );
        for i in 0..stats.trials {
            csv.push_str(&format!("{n},{i},{},{},{},{}\n", stats.sup_s[i], sup_m[i], qv[i], sup_x[i]));
        }
        let samples: Vec<f64> = stats.sup_s.iter().map(|s| s / n as f64).collect();
        let moments = loaded
            .config
            .p
            .to_vec()
            .into_iter()
            .map(|p| empirical_lp(&samples, p))
            .collect::<Result<Vec<_>, _>>()?;
        runs.push(json!({
            "n": n,
            "trials": stats.trials,
            "normalized_sup_moments": moments,
            "decomposition_residual": stats.decomposition_residual,
        }));
    }
    let mut report = prep.summary;
    report["simulations"] = json!(runs);
    Ok(Outcome {
        report,
        csv: csv.into_bytes(),
        pass: true,
    })
}

fn run_verify(loaded: &Loaded, reg: &ConstantsRegistry, seed: u64) -> Result<Outcome, CliError> {
    let prep = prepare(loaded)?;
    let mut reports = Vec::new();
    for n in loaded.config.n.to_vec() {
        let stats = simulate_sums(&loaded.chain, &prep.table, &sim_config(loaded, n, seed))?;
        let samples: Vec<f64> = stats.sup_s.iter().map(|s| s / n as f64).collect();
        for p in loaded.config.p.to_vec() {
            let input = bound_input(loaded, &prep, p, n);
            let moment = empirical_lp(&samples, p)?;
            for b in evaluate_all(loaded, &prep, &input, reg)? {
                let id = b.theorem.id();
                let r = check_inequality(id, Lhs::Empirical(moment), b.value);
                reports.push(r.with_meta(Some(seed), Some(n), Some(p), input.delta));
                if matches!(b.theorem, Theorem::Hoeffding | Theorem::Bernstein) {
                    let delta = input.delta.expect("set when evaluated");
                    let hits = samples.iter().filter(|s| **s > b.value).count();
                    let upper = wilson_upper(hits, samples.len(), Z_99);
                    let r = VerificationReport::new(format!("{id}_exceedance"), hits as f64 / samples.len() as f64, upper, delta);
                    reports.push(r.with_meta(Some(seed), Some(n), Some(p), Some(delta)));
                }
            }
        }
    }
    let pass = !reports.iter().any(VerificationReport::is_failure);
    let mut csv = Vec::new();
    write_csv(&mut csv, &reports)?;
    let mut report = prep.summary;
    report["checks"] = json!(reports);
    Ok(Outcome { report, csv, pass })
}

fn run_apps(loaded: &Loaded, reg: &ConstantsRegistry, seed: u64, pca: bool) -> Result<Outcome, CliError> {
    let vectors = loaded
        .table
        .vectors
        .clone()
        .ok_or_else(|| CliError::Config("applications need a `vectors` table".into()))?;
    let f = VectorFunctionTable::new(vectors)?;
    let delta = loaded
        .config
        .delta
        .ok_or_else(|| CliError::Config("applications need `delta`".into()))?;
    let n = loaded.config.n.to_vec()[0];
    let upsilon = loaded.config.dimension_free.as_ref().map(|d| &d.upsilon);
    let mut result: CovPcaResult = covariance_experiment(&loaded.chain, &f, n, loaded.config.trials, delta, seed, upsilon, reg)?;
    if pca {
        result = pca_experiment(&result)?;
    }
    let mut checks = Vec::new();
    for (i, e) in result.realized_error.iter().enumerate() {
        checks.push(VerificationReport::new(format!("covariance_{i}"), *e, *e, result.bernstein_bound).with_meta(Some(seed), Some(n), None, Some(delta)));
    }
    if let (Some(s), Some(b)) = (&result.sin2, &result.sin2_bound) {
        for (i, (s, b)) in s.iter().zip(b).enumerate() {
            checks.push(VerificationReport::new(format!("pca_{i}"), *s, *s, b + 1e-12).with_meta(Some(seed), Some(n), None, Some(delta)));
        }
    }
    let failures = checks.iter().filter(|c| c.is_failure()).count();
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    let report = json!({
        "result": result,
        "checks_run": checks.len(),
        "failures": failures,
        "failed_checks": checks.iter().filter(|c| c.is_failure()).collect::<Vec<_>>(),
    });
    Ok(Outcome {
        report,
        csv,
        pass: failures == 0,
    })
}
