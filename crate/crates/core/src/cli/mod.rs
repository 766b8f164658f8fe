//! Command-line front end: `run`, `stability`, `oracle` and `validate`.
//!
//! Exit codes: 0 success, 2 configuration or problem error, 3 numerical
//! divergence, 4 I/O error, 1 anything else.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;

pub use config::{ExperimentConfig, Problem};
pub use output::{read_trajectory_csv, write_trajectory_csv};

use crate::dynamics::{centralized_md, Network, NetworkState, RunMetadata, RunOutcome, SimulationConfig, Trajectory};
use crate::error::{Error, Result};
use crate::graph::spectral_decomposition;
use crate::metrics::{
    curve_for_agent, curve_from_trajectory, export_csv, fit_exponential_rate, ConvergenceCurve, RateFit,
    DEFAULT_TAIL_FRACTION, LOG_FLOOR,
};
use crate::objective::{wine_like_dataset, LocalCost, PreprocessingRecord};
use crate::stability::{
    assemble_linearization, check_stability, determinant_check, distances_to_equilibrium,
    empirical_rate_vs_theory, DeterminantCheck, RateComparison, StabilityReport,
};

pub const LOG_ENV: &str = "MIRRORFLOW_LOG";
pub const MAIN_RUN: &str = "integral_feedback";
/// Seed of the bundled wine-shaped table.
pub const WINE_LIKE_SEED: u64 = 20_240_901;

#[derive(Debug, Parser)]
#[command(name = "mirrorflow", version, about = "Distributed mirror descent with integral feedback")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Check the config and exit.
    #[arg(long, global = true)]
    pub validate_only: bool,
    /// Print the default config as TOML and exit.
    #[arg(long, global = true)]
    pub print_defaults: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Main run, baselines, stability certificate and all outputs (default).
    Run,
    /// Linearization spectrum and certificate only.
    Stability,
    /// Closed-form optimum and a centralized mirror-descent run.
    Oracle,
    /// Parse and check the config.
    Validate,
    /// Write the wine-shaped synthetic table.
    #[command(hide = true)]
    GenData {
        #[arg(long, default_value_t = 4000)]
        rows: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::DisconnectedGraph { .. }
        | Error::SelfLoop(_)
        | Error::DuplicateEdge(..)
        | Error::IndexOutOfRange { .. }
        | Error::DimensionMismatch { .. }
        | Error::InsufficientData(_)
        | Error::RankDeficient { .. } => 2,
        Error::Diverged { .. } | Error::NumericalOverflow(_) => 3,
        Error::Io { .. } | Error::Csv(_) | Error::Json(_) => 4,
        _ => 1,
    }
}

/// Parses `args`, executes, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.directory = out.clone();
    }
    Ok(config)
}

pub fn execute(cli: &Cli) -> Result<()> {
    if cli.print_defaults {
        print!("{}", ExperimentConfig::default().to_toml());
        return Ok(());
    }
    if let Some(Command::GenData { rows, output }) = &cli.command {
        let data = wine_like_dataset(*rows, cli.seed.unwrap_or(WINE_LIKE_SEED));
        data.to_csv(output)?;
        println!("wrote {} rows to {}", rows, output.display());
        return Ok(());
    }
    let config = load_config(cli)?;
    config.validate()?;
    if cli.validate_only || matches!(cli.command, Some(Command::Validate)) {
        let problem = config.build_problem()?;
        println!(
            "config ok: {} agents, dimension {}, graph {}, hash {}",
            problem.costs.agent_count(),
            problem.costs.dim(),
            problem.graph.label(),
            config.hash()
        );
        return Ok(());
    }
    let out = config.output.directory.clone();
    match cli.command {
        None | Some(Command::Run) => {
            let summary = run_experiment(&config, &out)?;
            summary.print();
            summary.into_result()
        }
        Some(Command::Stability) => {
            let analysis = stability_analysis(&config, &out)?;
            let r = &analysis.report;
            println!(
                "order {}: min Re(lambda) = {:e}, all positive: {}, det(M) > 0: {}, H + L PD: {}",
                r.order, r.min_real_part, r.all_positive, r.det_sign_positive, r.hl_positive_definite
            );
            for v in &r.violations {
                println!("violation: {v}");
            }
            Ok(())
        }
        Some(Command::Oracle) => {
            let oracle = oracle_run(&config, &out)?;
            println!(
                "x* = {:?}\n||grad F(x*)|| = {:e} (bound {:e}, ok: {}), centralized final distance {:e}",
                oracle.x_star, oracle.gradient_norm, oracle.gradient_bound, oracle.gradient_ok, oracle.centralized_distance
            );
            Ok(())
        }
        Some(Command::Validate) | Some(Command::GenData { .. }) => unreachable!(),
    }
}

/// Everything the pipeline derives before writing files.
struct Prepared<'a> {
    network: Network<'a>,
    x_star: DVector<f64>,
    f_star: f64,
    initial: NetworkState,
    sim: SimulationConfig,
    dt_source: &'static str,
    x_star_in_domain: bool,
}

fn prepare<'a>(config: &ExperimentConfig, problem: &'a Problem) -> Result<Prepared<'a>> {
    let network = Network::new(&problem.costs, &problem.graph, &problem.dgf)?;
    let x_star = problem.costs.closed_form_optimum()?;
    let f_star = problem.costs.global_value(x_star.as_slice())?;
    let x_star_in_domain = problem.dgf.contains(x_star.as_slice());
    if !x_star_in_domain {
        log::warn!(
            "the least-squares optimum lies outside the {} domain; the dynamics cannot reach it",
            problem.dgf.name()
        );
    }
    let x0 = config
        .dynamics
        .x0
        .realize(network.agents(), network.dim(), config.x0_seed())?;
    let initial = network
        .init_state(&x0)
        .map_err(|e| Error::Config(format!("initial point rejected: {e}")))?;
    let (dt, dt_source) = match config.dynamics.dt {
        Some(dt) => (dt, "config"),
        None => {
            let mut dt = network.default_step_size(&initial)?;
            if x_star_in_domain {
                let eq = network.equilibrium(&x_star)?.as_state();
                dt = dt.min(network.default_step_size(&eq)?);
            }
            (dt, "derived")
        }
    };
    let sim = SimulationConfig::new(dt, config.dynamics.steps, config.dynamics.stride)?;
    Ok(Prepared {
        network,
        x_star,
        f_star,
        initial,
        sim,
        dt_source,
        x_star_in_domain,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub name: String,
    pub metadata: RunMetadata,
    pub outcome: RunOutcome,
    pub samples: usize,
    pub terminal_suboptimality: Option<f64>,
    pub terminal_consensus_error: Option<f64>,
    pub rate_fit: Option<RateFit>,
    pub rate_fit_note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityOutput {
    pub config_hash: String,
    pub report: StabilityReport,
    pub determinant: Option<DeterminantCheck>,
    pub determinant_note: Option<String>,
    pub observed_rate: Option<RateComparison>,
    pub observed_rate_note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadataFile {
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub agents: usize,
    pub dim: usize,
    pub graph: String,
    pub dgf: String,
    pub dt: f64,
    pub dt_source: String,
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub x_star_in_domain: bool,
    pub preprocessing: Option<PreprocessingRecord>,
    pub runs: Vec<RunRecord>,
    pub baseline_failures: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub directory: PathBuf,
    pub metadata: RunMetadataFile,
    pub stability: Option<StabilityOutput>,
    pub curves: Vec<(String, ConvergenceCurve)>,
}

impl RunSummary {
    pub fn curve(&self, name: &str) -> Option<&ConvergenceCurve> {
        self.curves.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    pub fn run(&self, name: &str) -> Option<&RunRecord> {
        self.metadata.runs.iter().find(|r| r.name == name)
    }

    fn print(&self) {
        let m = &self.metadata;
        println!(
            "{} agents, d = {}, graph {}, {} mirror map, dt = {:e} ({}), config hash {}",
            m.agents, m.dim, m.graph, m.dgf, m.dt, m.dt_source, m.config_hash
        );
        for r in &m.runs {
            let status = match &r.outcome {
                RunOutcome::Completed => "completed".to_owned(),
                RunOutcome::Diverged { step, .. } => format!("diverged at step {step}"),
            };
            println!(
                "{:<20} {status}, terminal suboptimality {:e}, consensus error {:e}",
                r.name,
                r.terminal_suboptimality.unwrap_or(f64::NAN),
                r.terminal_consensus_error.unwrap_or(f64::NAN)
            );
        }
        if let Some(s) = &self.stability {
            println!(
                "stability: min Re(lambda) = {:e}, all positive {}, det(M) > 0 {}, H + L PD {}",
                s.report.min_real_part, s.report.all_positive, s.report.det_sign_positive, s.report.hl_positive_definite
            );
        }
        for w in &m.warnings {
            println!("warning: {w}");
        }
        println!("outputs in {}", self.directory.display());
    }

    /// `Err(Diverged)` when the main run diverged.
    pub fn into_result(self) -> Result<()> {
        match self.run(MAIN_RUN).map(|r| &r.outcome) {
            Some(RunOutcome::Diverged { step, reason }) => Err(Error::Diverged {
                step: *step,
                reason: reason.clone(),
            }),
            _ => Ok(()),
        }
    }
}

fn record_for(name: &str, traj: &Trajectory, curve: &ConvergenceCurve, hash: &str) -> RunRecord {
    let mut metadata = traj.metadata.clone();
    metadata.config_hash = Some(hash.to_owned());
    let (rate_fit, rate_fit_note) = match fit_exponential_rate(curve, DEFAULT_TAIL_FRACTION, LOG_FLOOR) {
        Ok(fit) => (Some(fit), None),
        Err(Error::AllBelowFloor { floor }) => {
            (None, Some(format!("converged: every tail sample is at or below {floor:e}")))
        }
        Err(e) => (None, Some(e.to_string())),
    };
    RunRecord {
        name: name.to_owned(),
        metadata,
        outcome: traj.outcome().clone(),
        samples: traj.len(),
        terminal_suboptimality: curve.suboptimality.last().copied(),
        terminal_consensus_error: curve.consensus_error.last().copied(),
        rate_fit,
        rate_fit_note,
    }
}

/// Full pipeline: the integral-feedback run, each baseline, curves, rate
/// fits and the stability certificate, written to `out`. Nothing is written
/// unless the problem builds and the main run can start.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let problem = config.build_problem()?;
    let prep = prepare(config, &problem)?;
    let hash = config.hash();
    let net = prep.network;

    let (main, baselines) = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .baselines
            .iter()
            .map(|b| {
                let schedule = b.schedule(prep.sim.dt);
                let initial = &prep.initial;
                let sim = &prep.sim;
                scope.spawn(move || net.baseline_dmd(initial, schedule, b.form, sim))
            })
            .collect();
        let main = net.simulate(&prep.initial, &prep.sim);
        let baselines: Vec<_> = handles
            .into_iter()
            .map(|h| h.join().expect("baseline thread panicked"))
            .collect();
        (main, baselines)
    });
    let main = main?;

    let mut warnings = Vec::new();
    if !prep.x_star_in_domain {
        warnings.push(format!(
            "the least-squares optimum lies outside the {} domain",
            problem.dgf.name()
        ));
    }
    let mut runs = vec![(MAIN_RUN.to_owned(), main)];
    let mut baseline_failures = Vec::new();
    for (b, result) in config.baselines.iter().zip(baselines) {
        match result {
            Ok(traj) => runs.push((b.run_name().to_owned(), traj)),
            Err(e) => {
                log::warn!("baseline {} failed: {e}", b.run_name());
                baseline_failures.push(format!("{}: {e}", b.run_name()));
            }
        }
    }

    let mut curves = Vec::new();
    let mut records = Vec::new();
    for (name, traj) in &runs {
        let curve = curve_from_trajectory(traj, &problem.costs, &prep.x_star)?;
        records.push(record_for(name, traj, &curve, &hash));
        curves.push((name.clone(), curve));
    }

    let stability = if config.stability.enabled {
        if prep.x_star_in_domain {
            Some(certificate(config, &problem, &prep, Some(&runs[0].1), &hash)?)
        } else {
            warnings.push("stability certificate skipped: x* is outside the mirror-map domain".into());
            None
        }
    } else {
        None
    };

    let metadata = RunMetadataFile {
        config_hash: hash.clone(),
        seed: config.seed,
        config: canonical(config),
        agents: net.agents(),
        dim: net.dim(),
        graph: problem.graph.label().to_owned(),
        dgf: problem.dgf.name().to_owned(),
        dt: prep.sim.dt,
        dt_source: prep.dt_source.to_owned(),
        x_star: prep.x_star.iter().copied().collect(),
        f_star: prep.f_star,
        x_star_in_domain: prep.x_star_in_domain,
        preprocessing: problem.preprocessing.clone(),
        runs: records,
        baseline_failures,
        warnings,
    };

    create_dir(out)?;
    for (name, traj) in &runs {
        write_trajectory_csv(traj, net.dim(), &out.join(format!("trajectory_{name}.csv")), &hash)?;
    }
    let named: Vec<(&str, &ConvergenceCurve)> = curves.iter().map(|(n, c)| (n.as_str(), c)).collect();
    export_csv(&named, &out.join("comparison.csv"), Some(&hash))?;
    if config.output.per_agent {
        let mut per_agent = Vec::new();
        for (name, traj) in &runs {
            for agent in 0..net.agents() {
                let curve = curve_for_agent(traj, &problem.costs, &prep.x_star, agent)?;
                per_agent.push((format!("{name}/agent{}", agent + 1), curve));
            }
        }
        let named: Vec<(&str, &ConvergenceCurve)> = per_agent.iter().map(|(n, c)| (n.as_str(), c)).collect();
        export_csv(&named, &out.join("comparison_per_agent.csv"), Some(&hash))?;
    }
    if let Some(s) = &stability {
        write_json(&out.join("stability.json"), s)?;
    }
    write_json(&out.join("metadata.json"), &metadata)?;

    Ok(RunSummary {
        directory: out.to_owned(),
        metadata,
        stability,
        curves,
    })
}

fn canonical(config: &ExperimentConfig) -> ExperimentConfig {
    let mut c = config.clone();
    c.output.directory = PathBuf::new();
    c
}

fn certificate(
    config: &ExperimentConfig,
    problem: &Problem,
    prep: &Prepared<'_>,
    main: Option<&Trajectory>,
    hash: &str,
) -> Result<StabilityOutput> {
    let spectral = spectral_decomposition(&problem.graph)?;
    let system = assemble_linearization(&prep.network, &spectral, &prep.x_star)?;
    let report = check_stability(&system, Some(config.stability.tolerance))?;
    let (determinant, determinant_note) = match determinant_check(&system) {
        Ok(d) => (Some(d), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (observed_rate, observed_rate_note) = match main {
        Some(traj) => {
            let eq = prep.network.equilibrium(&prep.x_star)?;
            let (times, dist) = distances_to_equilibrium(traj, &eq);
            match empirical_rate_vs_theory(&times, &dist, report.rate_estimate, config.stability.delta, LOG_FLOOR) {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e.to_string())),
            }
        }
        None => (None, None),
    };
    Ok(StabilityOutput {
        config_hash: hash.to_owned(),
        report,
        determinant,
        determinant_note,
        observed_rate,
        observed_rate_note,
    })
}

/// `stability` subcommand: assembles `M` at the closed-form optimum and
/// writes `stability.json`.
pub fn stability_analysis(config: &ExperimentConfig, out: &Path) -> Result<StabilityOutput> {
    let problem = config.build_problem()?;
    let prep = prepare(config, &problem)?;
    if !prep.x_star_in_domain {
        return Err(Error::Config(format!(
            "x* lies outside the {} domain; no linearization exists there",
            problem.dgf.name()
        )));
    }
    let result = certificate(config, &problem, &prep, None, &config.hash())?;
    create_dir(out)?;
    write_json(&out.join("stability.json"), &result)?;
    Ok(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleOutput {
    pub config_hash: String,
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub gradient_norm: f64,
    /// `1e-8 (1 + ||grad F(0)||)`.
    pub gradient_bound: f64,
    pub gradient_ok: bool,
    pub centralized_outcome: RunOutcome,
    pub centralized_final: Vec<f64>,
    pub centralized_distance: f64,
    pub centralized_suboptimality: f64,
}

/// `oracle` subcommand: closed-form optimum, its gradient check, and
/// centralized mirror descent from agent 1's initial point.
pub fn oracle_run(config: &ExperimentConfig, out: &Path) -> Result<OracleOutput> {
    let problem = config.build_problem()?;
    let prep = prepare(config, &problem)?;
    let global = problem.costs.as_global();
    let d = problem.costs.dim();
    let gradient_norm = global.gradient(prep.x_star.as_slice()).norm();
    let gradient_bound = 1e-8 * (1.0 + global.gradient(&vec![0.0; d]).norm());
    let x0 = DVector::from_column_slice(prep.initial.agent_x(0, d));
    let traj = centralized_md(&global, &problem.dgf, &x0, &prep.sim)?;
    let last = traj.last().expect("trajectory holds the initial state");
    let result = OracleOutput {
        config_hash: config.hash(),
        x_star: prep.x_star.iter().copied().collect(),
        f_star: prep.f_star,
        gradient_norm,
        gradient_bound,
        gradient_ok: gradient_norm < gradient_bound,
        centralized_outcome: traj.outcome().clone(),
        centralized_final: last.x.iter().copied().collect(),
        centralized_distance: (&last.x - &prep.x_star).norm(),
        centralized_suboptimality: global.value(last.x.as_slice()) - prep.f_star,
    };
    create_dir(out)?;
    output::write_vector_csv(&out.join("x_star.csv"), &prep.x_star, &result.config_hash)?;
    write_json(&out.join("oracle.json"), &result)?;
    Ok(result)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
