use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    compare_runs, discrete_kalman_oracle, grid_index, initial_covariance, observation_increments,
    status_for, tally, validate_grid_times, CheckpointEstimate, GroupReport, ModelSpec, PathRecord,
    RateFit, StudyKind, StudyReport,
};
use crate::diagnostics::{moment_norm, order_fit_ci};
use crate::ekf::filter_run;
use crate::error::{Error, Result};
use crate::matkit::{norm2, sqrt_spd, Mat, SpdMat};
use crate::models::{InitialCondition, ModelCoefficients};
use crate::sde::{brownian_increments, default_dt, simulate, split_seed, NoiseChannel, SimConfig};

/// Below this, every error norm is treated as exactly zero (noiseless run).
const ZERO_NORM: f64 = 1e-12;

fn default_q_orders() -> Vec<f64> {
    vec![2.0]
}

/// Settings of a study of `Q^{-1/2}(t)(Y(t) − M(t))` as ε shrinks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceStudySpec {
    pub model: ModelSpec,
    /// Strictly decreasing, in (0, 1].
    pub eps_grid: Vec<f64>,
    pub n_paths: usize,
    #[serde(default = "default_q_orders")]
    pub q_orders: Vec<f64>,
    pub t_checkpoints: Vec<f64>,
    /// Step size; the model's default when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub master_seed: u64,
    /// Initial scaled covariance `Q(0)`; identity when absent.
    #[serde(default)]
    pub q0: Option<Vec<Vec<f64>>>,
    /// Zero every Brownian increment and the initial error draw.
    #[serde(default)]
    pub zero_noise: bool,
}

impl ConvergenceStudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.eps_grid.is_empty() {
            return Err(Error::InvalidParameter("eps_grid must not be empty".into()));
        }
        if self.eps_grid.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(Error::InvalidParameter("eps_grid values must lie in (0, 1]".into()));
        }
        if self.eps_grid.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidParameter("eps_grid must be strictly decreasing".into()));
        }
        if self.n_paths < 30 {
            return Err(Error::InvalidParameter(format!(
                "n_paths must be >= 30, got {}",
                self.n_paths
            )));
        }
        if self.q_orders.is_empty() || self.q_orders.iter().any(|q| !(*q >= 1.0) || !q.is_finite()) {
            return Err(Error::InvalidParameter("q_orders must be non-empty and >= 1".into()));
        }
        validate_grid_times("t_checkpoints", &self.t_checkpoints)?;
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
            }
        }
        Ok(())
    }

    fn t_end(&self) -> f64 {
        *self.t_checkpoints.last().expect("validated non-empty")
    }
}

struct PathSetup<'a> {
    model: &'a dyn ModelCoefficients,
    ic: &'a InitialCondition,
    epsilon: f64,
    dt: f64,
    t_end: f64,
    q0: &'a SpdMat,
    q0_sqrt: &'a Mat,
    zero_noise: bool,
    checkpoints: &'a [usize],
}

/// Scaled-error norm of one path at every checkpoint.
fn run_path(s: &PathSetup<'_>, seed: u64) -> Result<Vec<f64>> {
    let cfg = SimConfig {
        epsilon: s.epsilon,
        dt: s.dt,
        t_end: s.t_end,
        seed,
        zero_noise: s.zero_noise,
    };
    let traj = simulate(s.model, s.ic, &cfg)?;
    let n = s.ic.y0.len();
    let xi = if s.zero_noise {
        vec![0.0; n]
    } else {
        brownian_increments(seed, NoiseChannel::InitialError, 1, n, 1.0).remove(0)
    };
    let shift = s.q0_sqrt.mul_vec(&xi);
    let sqrt_eps = s.epsilon.sqrt();
    let m0: Vec<f64> = s.ic.y0.iter().zip(&shift).map(|(y, d)| y - sqrt_eps * d).collect();
    let run = filter_run(s.model, &traj, &m0, s.q0)?;
    let errs = run.scaled_errors.as_ref().expect("filter_run records scaled errors");
    Ok(s.checkpoints.iter().map(|&k| norm2(&errs[k])).collect())
}

/// Runs the filter on `n_paths` paths per ε with `Y(0) − M(0) = √ε Q(0)^{1/2} ξ`,
/// estimates `|Q^{-1/2}(Y − M)|_q` at each checkpoint and fits its order in ε.
pub fn run_convergence_study(spec: &ConvergenceStudySpec) -> Result<StudyReport> {
    spec.validate()?;
    let started = Instant::now();
    let first = spec.model.build(Some(spec.eps_grid[0]))?;
    let dt = spec.dt.unwrap_or_else(|| default_dt(first.model.as_ref()));
    let t_end = spec.t_end();
    if t_end < dt {
        return Err(Error::InvalidParameter(format!(
            "last checkpoint {t_end} is shorter than one step {dt}"
        )));
    }
    let checkpoints = spec
        .t_checkpoints
        .iter()
        .map(|&t| grid_index(t, dt))
        .collect::<Result<Vec<_>>>()?;
    let n = first.model.dims().n;
    let q0 = initial_covariance(spec.q0.as_deref(), n)?;
    let q0_sqrt = sqrt_spd(q0.as_mat())?;

    let mut groups = Vec::with_capacity(spec.eps_grid.len());
    let mut per_path = Vec::new();
    let mut oracle = Vec::new();
    let mut total_failed = 0;
    for &eps in &spec.eps_grid {
        let built = spec.model.build(Some(eps))?;
        let setup = PathSetup {
            model: built.model.as_ref(),
            ic: &built.ic,
            epsilon: eps,
            dt,
            t_end,
            q0: &q0,
            q0_sqrt: &q0_sqrt,
            zero_noise: spec.zero_noise,
            checkpoints: &checkpoints,
        };
        let outcomes: Vec<Result<Vec<f64>>> = (0..spec.n_paths)
            .into_par_iter()
            .map(|j| run_path(&setup, split_seed(spec.master_seed, j as u64)))
            .collect();
        let failures: Vec<&'static str> =
            outcomes.iter().filter_map(|o| o.as_ref().err().map(|e| e.kind())).collect();
        let ok: Vec<(usize, &Vec<f64>)> = outcomes
            .iter()
            .enumerate()
            .filter_map(|(j, o)| o.as_ref().ok().map(|v| (j, v)))
            .collect();
        if ok.len() < 2 {
            return Err(Error::AllPathsFailed { epsilon: eps, n_paths: spec.n_paths });
        }
        if !failures.is_empty() {
            warn!("{} of {} paths failed at epsilon = {eps}", failures.len(), spec.n_paths);
        }
        total_failed += failures.len();
        let mut estimates = Vec::new();
        for (c, &t) in spec.t_checkpoints.iter().enumerate() {
            let samples: Vec<Vec<f64>> = ok.iter().map(|(_, v)| vec![v[c]]).collect();
            for &q in &spec.q_orders {
                estimates.push(CheckpointEstimate { t, estimate: moment_norm(&samples, q)? });
            }
        }
        for (j, v) in &ok {
            for (c, &t) in spec.t_checkpoints.iter().enumerate() {
                per_path.push(PathRecord {
                    parameter: eps,
                    path: *j,
                    seed: split_seed(spec.master_seed, *j as u64),
                    t,
                    value: v[c],
                });
            }
        }
        if built.model.as_linear().is_some() {
            oracle.push(oracle_check(&setup, split_seed(spec.master_seed, 0))?);
        }
        info!("epsilon = {eps}: {} paths ok", ok.len());
        groups.push(GroupReport {
            parameter: eps,
            n_paths: spec.n_paths,
            failed_paths: failures.len(),
            failure_reasons: tally(failures),
            estimates,
        });
    }

    let mut fits = Vec::new();
    for &t in &spec.t_checkpoints {
        for &q in &spec.q_orders {
            let ests: Vec<_> = groups
                .iter()
                .map(|g| {
                    g.estimates
                        .iter()
                        .find(|e| e.t == t && e.estimate.q_order == q)
                        .expect("estimate for every checkpoint and order")
                        .estimate
                        .clone()
                })
                .collect();
            fits.push(rate_fit(&spec.eps_grid, &ests, t, q)?);
        }
    }

    let total = spec.n_paths * spec.eps_grid.len();
    let (status, failed_fraction) = status_for(total_failed, total);
    Ok(StudyReport {
        schema: StudyReport::SCHEMA,
        kind: StudyKind::Convergence,
        parameter_name: "epsilon",
        spec: serde_json::to_value(spec).expect("spec serializes"),
        status,
        total_paths: total,
        failed_paths: total_failed,
        failed_fraction,
        groups,
        fits,
        forgetting: None,
        pilot_stability: None,
        oracle,
        wall_clock: started.elapsed(),
        per_path,
    })
}

fn rate_fit(
    eps_grid: &[f64],
    ests: &[crate::diagnostics::MomentEstimate],
    t: f64,
    q: f64,
) -> Result<RateFit> {
    let none = |status: &str| RateFit {
        t,
        q_order: q,
        status: status.into(),
        alpha_hat: None,
        intercept: None,
        r2: None,
        alpha_ci: None,
    };
    if ests.iter().all(|e| e.value <= ZERO_NORM) {
        return Ok(none("degenerate: no fit"));
    }
    if eps_grid.len() < 3 {
        return Ok(none("insufficient grid: no fit"));
    }
    match order_fit_ci(eps_grid, ests, 0.95) {
        Ok((fit, ci)) => Ok(RateFit {
            t,
            q_order: q,
            status: "fitted".into(),
            alpha_hat: Some(fit.alpha_hat),
            intercept: Some(fit.intercept),
            r2: Some(fit.r2),
            alpha_ci: Some(ci),
        }),
        Err(Error::DegenerateFit(msg)) => Ok(none(&format!("degenerate: {msg}"))),
        Err(e) => Err(e),
    }
}

/// EKF against the discrete Kalman recursion on path 0 of a linear model.
fn oracle_check(s: &PathSetup<'_>, seed: u64) -> Result<super::OracleComparison> {
    let cfg = SimConfig { epsilon: s.epsilon, dt: s.dt, t_end: s.t_end, seed, zero_noise: s.zero_noise };
    let traj = simulate(s.model, s.ic, &cfg)?;
    let ekf = filter_run(s.model, &traj, &s.ic.y0, s.q0)?;
    let dz = observation_increments(&traj.z_path);
    let kal = discrete_kalman_oracle(s.model, &dz, &s.ic.y0, s.q0, s.epsilon, s.dt)?;
    compare_runs(&ekf, &kal)
}
