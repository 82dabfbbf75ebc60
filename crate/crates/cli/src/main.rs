mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use smallnoise::diagnostics::{check_assumptions, filter_stability, trace_monitor, AssumptionSpec};
use smallnoise::sde::{default_dt, split_seed};
use smallnoise::studies::{
    compare_runs, discrete_kalman_oracle, initial_covariance, observation_increments,
    run_convergence_study, run_forgetting_study, BuiltModel, ConvergenceStudySpec,
    ForgettingStudySpec, ModelSpec, OracleComparison,
};
use smallnoise::{filter_run, simulate, SimConfig, SpdMat, Trajectory};

use config::RunConfig;

const REPORT_SCHEMA: &str = "smallnoise-run-v1";

#[derive(Parser)]
#[command(name = "smallnoise", version, about = "Extended Kalman filter with small state-dependent noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file (schema "smallnoise-config-v1").
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the file and SMALLNOISE_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long)]
    log_level: Option<String>,
}

#[derive(Args, Clone, Default)]
struct PathArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Zero every Brownian increment.
    #[arg(long)]
    zero_noise: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory and write it as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        path: PathArgs,
    },
    /// Simulate one trajectory and run the filter on it.
    Filter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        path: PathArgs,
    },
    /// Monte Carlo study of the error order in epsilon.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_paths: Option<usize>,
    },
    /// Monte Carlo study of how fast the filter forgets its initial error.
    Forgetting {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_paths: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Estimate the model assumptions on a box around the initial state.
    CheckAssumptions {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_pairs: Option<usize>,
        #[arg(long)]
        half_width: Option<f64>,
    },
    /// Compare the filter with the discrete Kalman recursion on a linear model.
    OracleCompare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        path: PathArgs,
        /// Number of paths to compare.
        #[arg(long)]
        paths: Option<usize>,
    },
}

enum Failure {
    Validation(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Validation(e)
    }
}

#[derive(Serialize)]
struct ErrorInfo {
    kind: &'static str,
    message: String,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<ErrorInfo>,
}

struct Ctx {
    cfg: RunConfig,
    command: &'static str,
}

impl Ctx {
    fn out(&self) -> &Path {
        &self.cfg.output_dir
    }

    fn write_report<T: Serialize>(&self, name: &str, result: T) -> anyhow::Result<()> {
        let env = Envelope {
            schema: REPORT_SCHEMA,
            command: self.command,
            config: &self.cfg,
            result: Some(result),
            error: None,
        };
        write_json(self.out(), name, &env)
    }

    /// Maps a core error to an exit class; numerical failures still leave a
    /// diagnostic report under `name`.
    fn fail(&self, name: &str, e: smallnoise::Error) -> Failure {
        if !e.is_numerical() {
            return Failure::Validation(anyhow!(e));
        }
        let env: Envelope<'_, ()> = Envelope {
            schema: REPORT_SCHEMA,
            command: self.command,
            config: &self.cfg,
            result: None,
            error: Some(ErrorInfo { kind: e.kind(), message: e.to_string() }),
        };
        if let Err(w) = write_json(self.out(), name, &env) {
            warn!("could not write diagnostic report: {w:#}");
        }
        Failure::Numerical(anyhow!(e))
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
    let path = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot write to output directory {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(dir, name, s.as_bytes())
}

fn write_csv(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(dir, name, &buf)
}

fn prepare(common: &Common, command: &'static str) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(l) = &common.log_level {
        cfg.log_level = l.clone();
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    cfg.resolve_seed(common.seed)?;
    let level: log::LevelFilter = cfg
        .log_level
        .parse()
        .map_err(|_| anyhow!("invalid log_level {:?}", cfg.log_level))?;
    env_logger::Builder::new().filter_level(level).try_init().ok();
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(anyhow!("threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create output directory {}", cfg.output_dir.display()))?;
    info!("{command}: output to {}", cfg.output_dir.display());
    Ok(cfg)
}

fn apply_path_args(cfg: &mut RunConfig, p: &PathArgs) {
    let s = &mut cfg.simulate;
    s.epsilon = p.epsilon.or(s.epsilon);
    s.dt = p.dt.or(s.dt);
    s.t_end = p.t_end.unwrap_or(s.t_end);
    s.zero_noise |= p.zero_noise;
}

/// Builds the model and the resolved single-path settings.
fn single_path(cfg: &mut RunConfig) -> Result<(BuiltModel, SimConfig), smallnoise::Error> {
    let s = &cfg.simulate;
    let built = cfg.model.build(s.epsilon)?;
    let epsilon = match (s.epsilon, built.model.intrinsic_epsilon()) {
        (Some(e), _) | (None, Some(e)) => e,
        (None, None) => {
            return Err(smallnoise::Error::InvalidParameter(
                "simulate.epsilon is required for this model".into(),
            ))
        }
    };
    let dt = s.dt.unwrap_or_else(|| default_dt(built.model.as_ref()));
    let sim = SimConfig { epsilon, dt, t_end: s.t_end, seed: cfg.master_seed(), zero_noise: s.zero_noise };
    sim.validate()?;
    cfg.simulate.epsilon = Some(epsilon);
    cfg.simulate.dt = Some(dt);
    Ok((built, sim))
}

#[derive(Serialize)]
struct SimulateResult {
    epsilon: f64,
    dt: f64,
    steps: usize,
    seed: u64,
}

fn cmd_simulate(common: Common, path: PathArgs) -> Result<(), Failure> {
    let mut cfg = prepare(&common, "simulate")?;
    apply_path_args(&mut cfg, &path);
    let (built, sim) = single_path(&mut cfg).map_err(|e| Failure::Validation(anyhow!(e)))?;
    let ctx = Ctx { cfg, command: "simulate" };
    let traj = simulate(built.model.as_ref(), &built.ic, &sim).map_err(|e| ctx.fail("simulate.json", e))?;
    write_csv(ctx.out(), "trajectory.csv", |w| traj.write_csv(w))?;
    ctx.write_report(
        "simulate.json",
        SimulateResult { epsilon: sim.epsilon, dt: sim.dt, steps: traj.steps(), seed: sim.seed },
    )?;
    Ok(())
}

fn filter_inputs(
    cfg: &RunConfig,
    built: &BuiltModel,
) -> Result<(Vec<f64>, SpdMat), smallnoise::Error> {
    let n = built.ic.y0.len();
    let m0 = cfg.simulate.m0.clone().unwrap_or_else(|| built.ic.y0.clone());
    let q0 = initial_covariance(cfg.simulate.q0.as_deref(), n)?;
    Ok((m0, q0))
}

fn cmd_filter(common: Common, path: PathArgs) -> Result<(), Failure> {
    let mut cfg = prepare(&common, "filter")?;
    apply_path_args(&mut cfg, &path);
    let (built, sim) = single_path(&mut cfg).map_err(|e| Failure::Validation(anyhow!(e)))?;
    let (m0, q0) = filter_inputs(&cfg, &built).map_err(|e| Failure::Validation(anyhow!(e)))?;
    let ctx = Ctx { cfg, command: "filter" };
    let model = built.model.as_ref();
    let traj = simulate(model, &built.ic, &sim).map_err(|e| ctx.fail("filter.json", e))?;
    write_csv(ctx.out(), "trajectory.csv", |w| traj.write_csv(w))?;
    let run = filter_run(model, &traj, &m0, &q0).map_err(|e| ctx.fail("filter.json", e))?;
    let traces = trace_monitor(&run).map_err(|e| ctx.fail("filter.json", e))?;
    write_csv(ctx.out(), "filter.csv", |w| run.write_csv(w))?;
    #[derive(Serialize)]
    struct FilterResult {
        summary: smallnoise::FilterSummary,
        trace_monitor: smallnoise::diagnostics::TraceMonitor,
    }
    ctx.write_report("filter.json", FilterResult { summary: run.summary(), trace_monitor: traces })?;
    Ok(())
}

fn cmd_convergence(common: Common, n_paths: Option<usize>) -> Result<(), Failure> {
    let mut cfg = prepare(&common, "convergence")?;
    let section = cfg
        .convergence
        .as_mut()
        .ok_or_else(|| anyhow!("the config has no [convergence] section"))?;
    if let Some(n) = n_paths {
        section.n_paths = n;
    }
    let s = section.clone();
    let spec = ConvergenceStudySpec {
        model: cfg.model.clone(),
        eps_grid: s.eps_grid,
        n_paths: s.n_paths,
        q_orders: s.q_orders,
        t_checkpoints: s.t_checkpoints,
        dt: s.dt,
        master_seed: cfg.master_seed(),
        q0: s.q0,
        zero_noise: s.zero_noise,
    };
    spec.validate().map_err(|e| Failure::Validation(anyhow!(e)))?;
    let ctx = Ctx { cfg, command: "convergence" };
    let report = run_convergence_study(&spec).map_err(|e| ctx.fail("convergence.json", e))?;
    write_csv(ctx.out(), "convergence_paths.csv", |w| report.write_csv(w))?;
    ctx.write_report("convergence.json", &report)?;
    Ok(())
}

fn cmd_forgetting(common: Common, n_paths: Option<usize>, epsilon: Option<f64>) -> Result<(), Failure> {
    let mut cfg = prepare(&common, "forgetting")?;
    let section = cfg
        .forgetting
        .as_mut()
        .ok_or_else(|| anyhow!("the config has no [forgetting] section"))?;
    if let Some(n) = n_paths {
        section.n_paths = n;
    }
    if let Some(e) = epsilon {
        section.epsilon = e;
    }
    let s = section.clone();
    let spec = ForgettingStudySpec {
        model: cfg.model.clone(),
        epsilon: s.epsilon,
        initial_error_magnitudes: s.initial_error_magnitudes,
        n_paths: s.n_paths,
        t_grid: s.t_grid,
        q_order: s.q_order,
        master_seed: cfg.master_seed(),
        dt: s.dt,
        q0: s.q0,
        direction: s.direction,
        fit_threshold: s.fit_threshold,
        stability_margin: s.stability_margin,
        stability_offsets: s.stability_offsets,
    };
    spec.validate().map_err(|e| Failure::Validation(anyhow!(e)))?;
    let ctx = Ctx { cfg, command: "forgetting" };
    let report = run_forgetting_study(&spec).map_err(|e| ctx.fail("forgetting.json", e))?;
    write_csv(ctx.out(), "forgetting_paths.csv", |w| report.write_csv(w))?;
    ctx.write_report("forgetting.json", &report)?;
    Ok(())
}

fn cmd_check_assumptions(
    common: Common,
    n_pairs: Option<usize>,
    half_width: Option<f64>,
) -> Result<(), Failure> {
    let mut cfg = prepare(&common, "check-assumptions")?;
    let seed = cfg.master_seed();
    let a = &mut cfg.assumptions;
    a.n_pairs = n_pairs.unwrap_or(a.n_pairs);
    a.half_width = half_width.unwrap_or(a.half_width);
    let spec = AssumptionSpec {
        half_width: a.half_width,
        n_pairs: a.n_pairs,
        seed,
        thresholds: a.thresholds.clone(),
    };
    let validation = |e: smallnoise::Error| Failure::Validation(anyhow!(e));
    let built = cfg.model.build(None).map_err(validation)?;
    let q0 = initial_covariance(cfg.simulate.q0.as_deref(), built.ic.y0.len()).map_err(validation)?;
    let companion = match &cfg.model {
        ModelSpec::Sis(p) => {
            let mut p = p.clone();
            p.population *= cfg.assumptions.companion_factor;
            Some(ModelSpec::Sis(p).build(None).map_err(validation)?)
        }
        _ => None,
    };
    let pilot = if cfg.assumptions.pilot {
        if cfg.simulate.epsilon.is_none() && built.model.intrinsic_epsilon().is_none() {
            cfg.simulate.epsilon = Some(1e-2);
        }
        Some(single_path(&mut cfg).map_err(validation)?)
    } else {
        None
    };
    let ctx = Ctx { cfg, command: "check-assumptions" };
    let model = built.model.as_ref();
    let mut report = check_assumptions(
        model,
        &built.ic,
        &q0,
        &spec,
        companion.as_ref().map(|c| c.model.as_ref()),
    )
    .map_err(|e| ctx.fail("assumptions.json", e))?;
    if let Some((pilot_model, sim)) = pilot {
        let run_pilot = || -> smallnoise::Result<_> {
            let traj: Trajectory = simulate(pilot_model.model.as_ref(), &pilot_model.ic, &sim)?;
            let run = filter_run(pilot_model.model.as_ref(), &traj, &pilot_model.ic.y0, &q0)?;
            filter_stability(
                pilot_model.model.as_ref(),
                &traj,
                &run,
                &ctx.cfg.assumptions.pilot_offsets,
                0.1,
            )
        };
        match run_pilot() {
            Ok(r) => report.filter_stability = Some(r),
            Err(e) => warn!("pilot filter run failed: {e}"),
        }
    }
    ctx.write_report("assumptions.json", &report)?;
    Ok(())
}

fn cmd_oracle_compare(common: Common, path: PathArgs, paths: Option<usize>) -> Result<(), Failure> {
    let mut cfg = prepare(&common, "oracle-compare")?;
    apply_path_args(&mut cfg, &path);
    if let Some(p) = paths {
        cfg.simulate.oracle_paths = p;
    }
    if cfg.simulate.oracle_paths == 0 {
        return Err(anyhow!("oracle_paths must be >= 1").into());
    }
    let validation = |e: smallnoise::Error| Failure::Validation(anyhow!(e));
    let (built, sim) = single_path(&mut cfg).map_err(validation)?;
    if built.model.as_linear().is_none() {
        return Err(validation(smallnoise::Error::NotLinear));
    }
    let (m0, q0) = filter_inputs(&cfg, &built).map_err(validation)?;
    let ctx = Ctx { cfg, command: "oracle-compare" };
    let model = built.model.as_ref();
    let compare_one = |i: usize| -> smallnoise::Result<OracleComparison> {
        let cfg_i = SimConfig { seed: split_seed(sim.seed, i as u64), ..sim.clone() };
        let traj = simulate(model, &built.ic, &cfg_i)?;
        let ekf = filter_run(model, &traj, &m0, &q0)?;
        let dz = observation_increments(&traj.z_path);
        let kal = discrete_kalman_oracle(model, &dz, &m0, &q0, sim.epsilon, sim.dt)?;
        compare_runs(&ekf, &kal)
    };
    let comparisons = (0..ctx.cfg.simulate.oracle_paths)
        .map(compare_one)
        .collect::<smallnoise::Result<Vec<_>>>()
        .map_err(|e| ctx.fail("oracle.json", e))?;
    #[derive(Serialize)]
    struct OracleResult {
        worst_mean_rms: f64,
        worst_scaled_cov_max_abs: f64,
        paths: Vec<OracleComparison>,
    }
    let fold = |f: fn(&OracleComparison) -> f64| comparisons.iter().map(f).fold(0.0, f64::max);
    let result = OracleResult {
        worst_mean_rms: fold(|c| c.mean_rms),
        worst_scaled_cov_max_abs: fold(|c| c.scaled_cov_max_abs),
        paths: comparisons.clone(),
    };
    ctx.write_report("oracle.json", result)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Simulate { common, path } => cmd_simulate(common, path),
        Command::Filter { common, path } => cmd_filter(common, path),
        Command::Convergence { common, n_paths } => cmd_convergence(common, n_paths),
        Command::Forgetting { common, n_paths, epsilon } => cmd_forgetting(common, n_paths, epsilon),
        Command::CheckAssumptions { common, n_pairs, half_width } => {
            cmd_check_assumptions(common, n_pairs, half_width)
        }
        Command::OracleCompare { common, path, paths } => cmd_oracle_compare(common, path, paths),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(2)
        }
    }
}
