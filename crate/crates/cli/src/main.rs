//! `dsmpc`: offline synthesis, closed-loop runs, Monte-Carlo campaigns and
//! verification of the terminal ingredients.
//!
//! Exit codes: 0 success, 1 other error, 2 invalid configuration or
//! arguments, 3 synthesis infeasible, 4 ingredients/model hash mismatch,
//! 5 closed-loop run failure, 6 failed verification property.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsmpc::admm::AdmmParams;
use dsmpc::config::ModelConfig;
use dsmpc::controller::{ControllerOptions, SolveMode};
use dsmpc::error::{IoError, SynthesisError};
use dsmpc::local_mpc::MpcContext;
use dsmpc::model::{build_network, NetworkModel};
use dsmpc::simulator::{self, McMetrics, NoiseModel, SimulationRecord, SimulationSetup};
use dsmpc::synthesis::{self, AlphaReport, SynthesisMode, SynthesisOptions, TerminalIngredients};
use dsmpc::verify::{self, VerifyOptions};
use nalgebra::DVector;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "dsmpc", version, about = "Distributed stochastic MPC for coupled linear systems with multiplicative noise")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesise terminal ingredients and write them with a verification report.
    Synth(SynthArgs),
    /// One closed-loop run.
    Run(SimArgs),
    /// Monte-Carlo campaign, one metrics row per consensus tolerance.
    Mc(SimArgs),
    /// Run the property suite on a set of ingredients.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Monolithic,
    Consensus,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Distributed,
    Centralized,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output file [default: <out>/ingredients.json].
    #[arg(long)]
    ingredients: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "monolithic")]
    mode: ModeArg,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long)]
    model: PathBuf,
    /// Ingredients file; synthesised in memory when absent.
    #[arg(long)]
    ingredients: Option<PathBuf>,
    /// Consensus tolerances, comma separated [default: from the model file].
    #[arg(long = "eps-c", value_delimiter = ',')]
    eps_c: Vec<f64>,
    /// Monte-Carlo runs [default: from the model file]; `run` uses run index 0.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads [default: available cores].
    #[arg(long)]
    jobs: Option<usize>,
    /// Noise-free closed loop.
    #[arg(long)]
    w_zero: bool,
    /// Check every step that the shifted plan is admissible at the next step.
    #[arg(long)]
    debug_shift_check: bool,
    #[arg(long, value_enum, default_value = "distributed")]
    solver: SolverArg,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    ingredients: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Boundary samples of the terminal set.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Random instances per Schur-complement equivalence.
    #[arg(long, default_value_t = 500)]
    schur_instances: usize,
    /// Optional JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Synthesis(String),
    #[error("{0}")]
    HashMismatch(String),
    #[error("{0}")]
    Run(String),
    #[error("{0}")]
    Verify(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Synthesis(_) => 3,
            CliError::HashMismatch(_) => 4,
            CliError::Run(_) => 5,
            CliError::Verify(_) => 6,
        }
    }

    fn class(&self) -> &'static str {
        match self {
            CliError::Other(_) => "other",
            CliError::Config(_) => "config",
            CliError::Synthesis(_) => "synthesis_infeasible",
            CliError::HashMismatch(_) => "hash_mismatch",
            CliError::Run(_) => "run_failure",
            CliError::Verify(_) => "verify_failure",
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::HashMismatch { .. } => CliError::HashMismatch(e.to_string()),
            IoError::Io { .. } | IoError::Csv(_) => CliError::Other(e.to_string()),
            IoError::Parse(_) | IoError::Model(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<SynthesisError> for CliError {
    fn from(e: SynthesisError) -> Self {
        CliError::Synthesis(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Other(format!("{}: {e}", path.display()))
}

/// Model, command parameters and output location, validated once.
#[derive(Debug, Clone)]
struct ExperimentConfig {
    model_path: PathBuf,
    model: ModelConfig,
    eps_c: Vec<f64>,
    runs: usize,
    steps: usize,
    seed: u64,
    out: PathBuf,
    w_zero: bool,
    debug_shift_check: bool,
    solver: SolveMode,
}

impl ExperimentConfig {
    fn from_args(a: &SimArgs) -> Result<Self, CliError> {
        let model = load_model(&a.model)?;
        let cfg = Self {
            model_path: a.model.clone(),
            eps_c: if a.eps_c.is_empty() { model.mpc.eps_c.clone() } else { a.eps_c.clone() },
            runs: a.runs.unwrap_or(model.simulation.runs),
            steps: a.steps.unwrap_or(model.simulation.steps),
            seed: a.seed.unwrap_or(model.simulation.seed),
            out: a.out.clone(),
            w_zero: a.w_zero,
            debug_shift_check: a.debug_shift_check,
            solver: match a.solver {
                SolverArg::Distributed => SolveMode::Distributed,
                SolverArg::Centralized => SolveMode::Centralized,
            },
            model,
        };
        cfg.validate(a.ingredients.as_deref())?;
        Ok(cfg)
    }

    fn validate(&self, ingredients: Option<&Path>) -> Result<(), CliError> {
        if let Some(p) = ingredients.filter(|p| !p.exists()) {
            return Err(CliError::Config(format!("ingredients file {} does not exist", p.display())));
        }
        if self.eps_c.is_empty() {
            return Err(CliError::Config("no consensus tolerance given".into()));
        }
        if let Some(e) = self.eps_c.iter().find(|e| !(**e > 0.0)) {
            return Err(CliError::Config(format!("--eps-c value {e} must be positive")));
        }
        if self.runs == 0 || self.steps == 0 {
            return Err(CliError::Config("--runs and --steps must be at least 1".into()));
        }
        Ok(())
    }

    fn admm(&self, eps_c: f64) -> AdmmParams {
        AdmmParams { rho: self.model.mpc.rho, eps_c, max_iter: self.model.mpc.max_iter }
    }
}

fn load_model(path: &Path) -> Result<ModelConfig, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("model file {} does not exist", path.display())));
    }
    Ok(ModelConfig::load(path)?)
}

fn network(cfg: &ModelConfig) -> Result<NetworkModel, CliError> {
    build_network(cfg).map_err(|e| CliError::Config(e.to_string()))
}

fn synthesis_options(cfg: &ModelConfig, mode: SynthesisMode) -> SynthesisOptions {
    SynthesisOptions { mode, epsilon: cfg.mpc.epsilon, ..SynthesisOptions::default() }
}

fn obtain_ingredients(
    path: Option<&Path>,
    cfg: &ModelConfig,
    net: &NetworkModel,
) -> Result<TerminalIngredients, CliError> {
    let hash = cfg.model_hash();
    let ing = match path {
        Some(p) => TerminalIngredients::load(p, Some(&hash))?,
        None => {
            log::info!("no ingredients file given; synthesising");
            synthesis::design(net, &hash, &synthesis_options(cfg, SynthesisMode::Monolithic))?.0
        }
    };
    if !ing.matches(net) {
        return Err(CliError::Config("ingredients do not match the model dimensions".into()));
    }
    Ok(ing)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn writer(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(path, s + "\n").map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct BoundRow<'a> {
    #[serde(flatten)]
    bound: &'a synthesis::AlphaBound,
    /// `value / α`; 1 on the binding constraint.
    ratio: f64,
}

#[derive(Serialize)]
struct SynthReport<'a> {
    model_hash: &'a str,
    mode: SynthesisMode,
    alpha: f64,
    alpha0: Vec<f64>,
    terminal_decrease_residual: f64,
    mean_square_radius: f64,
    terminal_covariance_equality_residual: f64,
    binding: usize,
    bounds: Vec<BoundRow<'a>>,
}

fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let cfg = load_model(&a.model)?;
    let net = network(&cfg)?;
    let mode = match a.mode {
        ModeArg::Monolithic => SynthesisMode::Monolithic,
        ModeArg::Consensus => SynthesisMode::Consensus,
    };
    let hash = cfg.model_hash();
    let (ing, report): (TerminalIngredients, AlphaReport) = synthesis::design(&net, &hash, &synthesis_options(&cfg, mode))?;
    create_dir(&a.out)?;
    let path = a.ingredients.clone().unwrap_or_else(|| a.out.join("ingredients.json"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    ing.save(&path)?;
    let residual = synthesis::terminal_decrease_residual(&ing, &net);
    let rep = SynthReport {
        model_hash: &hash,
        mode,
        alpha: ing.alpha,
        alpha0: ing.subsystems.iter().map(|s| s.alpha0).collect(),
        terminal_decrease_residual: residual,
        mean_square_radius: synthesis::mean_square_radius(&ing, &net),
        terminal_covariance_equality_residual: synthesis::terminal_covariance_equality_residual(&ing, &net),
        binding: report.binding,
        bounds: report.bounds.iter().map(|b| BoundRow { bound: b, ratio: b.value / report.alpha }).collect(),
    };
    write_json(&a.out.join("synth_report.json"), &rep)?;
    println!("ingredients written to {}", path.display());
    println!("alpha = {:.6e}, terminal decrease residual = {residual:.3e}", ing.alpha);
    if residual > 1e-6 {
        log::warn!("terminal decrease residual {residual:e} exceeds 1e-6");
    }
    Ok(())
}

fn setup(cfg: &ExperimentConfig, ingredients: Option<&Path>) -> Result<SimulationSetup, CliError> {
    let net = network(&cfg.model)?;
    let ing = obtain_ingredients(ingredients, &cfg.model, &net)?;
    let x0: Vec<DVector<f64>> = cfg.model.simulation.x0.iter().map(|v| DVector::from_vec(v.clone())).collect();
    if let Some((i, _)) = x0.iter().enumerate().find(|(i, x)| x.len() != net.subsystems[*i].n) {
        return Err(CliError::Config(format!("simulation.x0 entry {i} has the wrong dimension")));
    }
    let ctx = MpcContext::new(net, ing, cfg.model.mpc.horizon, cfg.model.mpc.epsilon)
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(SimulationSetup {
        ctx,
        options: ControllerOptions { mode: cfg.solver, admm: cfg.admm(cfg.eps_c[0]), debug_shift_check: cfg.debug_shift_check },
        x0,
        steps: cfg.steps,
        noise: if cfg.w_zero { NoiseModel::Zero } else { NoiseModel::StandardNormal },
    })
}

fn write_outputs(
    out: &Path,
    net: &NetworkModel,
    records: &[SimulationRecord],
    metrics: &[McMetrics],
) -> Result<(), CliError> {
    create_dir(out)?;
    let runs = out.join("runs.csv");
    simulator::write_runs_csv(writer(&runs)?, records).map_err(|e| io_err(&runs, e))?;
    let traj = out.join("trajectories.csv");
    simulator::write_trajectories_csv(writer(&traj)?, net, records).map_err(|e| io_err(&traj, e))?;
    let met = out.join("metrics.csv");
    simulator::write_metrics_csv(writer(&met)?, metrics).map_err(|e| io_err(&met, e))?;
    Ok(())
}

fn print_metrics(m: &McMetrics) {
    println!(
        "eps_c={:e} runs={} av_iter={:.2} max_iter={} av_J={:.3} Cv={} min_Cs={:.4} prediction_steps={} ({:.1} s)",
        m.eps_c, m.runs, m.av_iter, m.max_iter, m.av_j, m.cv, m.min_cs, m.prediction_steps, m.wall_seconds
    );
}

fn cmd_run(a: &SimArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::from_args(a)?;
    if cfg.eps_c.len() > 1 {
        log::info!("run uses the first consensus tolerance {:e}", cfg.eps_c[0]);
    }
    log::info!("model {}", cfg.model_path.display());
    let mut s = setup(&cfg, a.ingredients.as_deref())?;
    s.options.admm = cfg.admm(cfg.eps_c[0]);
    let started = std::time::Instant::now();
    let rec = simulator::simulate_run(&s, 0, cfg.seed).map_err(|e| CliError::Run(e.to_string()))?;
    let metrics = simulator::aggregate(std::slice::from_ref(&rec), cfg.eps_c[0], started.elapsed().as_secs_f64());
    write_outputs(&cfg.out, &s.ctx.net, std::slice::from_ref(&rec), std::slice::from_ref(&metrics))?;
    let steps_path = cfg.out.join("steps.jsonl");
    let mut w = writer(&steps_path)?;
    for d in &rec.steps {
        let line = serde_json::to_string(d).map_err(|e| CliError::Other(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| io_err(&steps_path, e))?;
    }
    w.flush().map_err(|e| io_err(&steps_path, e))?;
    print_metrics(&metrics);
    Ok(())
}

fn cmd_mc(a: &SimArgs, jobs: Option<usize>) -> Result<(), CliError> {
    let cfg = ExperimentConfig::from_args(a)?;
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let mut s = setup(&cfg, a.ingredients.as_deref())?;
    let mut all_records = Vec::new();
    let mut all_metrics = Vec::new();
    for &eps in &cfg.eps_c {
        s.options.admm = cfg.admm(eps);
        let (m, recs) = simulator::monte_carlo(&s, cfg.runs, cfg.seed).map_err(|e| CliError::Run(e.to_string()))?;
        print_metrics(&m);
        all_metrics.push(m);
        all_records.extend(recs);
    }
    write_outputs(&cfg.out, &s.ctx.net, &all_records, &all_metrics)
}

fn cmd_verify(a: &VerifyArgs) -> Result<(), CliError> {
    let cfg = load_model(&a.model)?;
    let net = network(&cfg)?;
    if !a.ingredients.exists() {
        return Err(CliError::Config(format!("ingredients file {} does not exist", a.ingredients.display())));
    }
    let ing = obtain_ingredients(Some(&a.ingredients), &cfg, &net)?;
    let opts = VerifyOptions {
        epsilon: cfg.mpc.epsilon,
        seed: a.seed,
        boundary_samples: a.samples,
        schur_instances: a.schur_instances,
        ..VerifyOptions::default()
    };
    let checks = verify::run_suite(&ing, &net, &opts);
    for c in &checks {
        println!(
            "{} {:<32} value={:<12.4e} tol={:<10.3e} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance,
            c.detail
        );
    }
    if let Some(p) = &a.out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        write_json(p, &checks)?;
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(format!("failed properties: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Run(a) => cmd_run(a),
        Command::Mc(a) => cmd_mc(a, a.jobs),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.class(), "code": e.code(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(e.code())
        }
    }
}
