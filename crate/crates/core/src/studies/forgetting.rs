use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    grid_index, initial_covariance, status_for, tally, validate_grid_times, CheckpointEstimate,
    GroupReport, ModelSpec, PathRecord, StudyKind, StudyReport,
};
use crate::diagnostics::{
    filter_stability, linear_fit, moment_norm_of_norms, percentile_interval, BOOTSTRAP_RESAMPLES,
};
use crate::ekf::filter_run;
use crate::error::{Error, Result};
use crate::matkit::{norm2, SpdMat};
use crate::models::{InitialCondition, ModelCoefficients};
use crate::sde::{default_dt, simulate, split_seed, SimConfig};

fn default_q_order() -> f64 {
    2.0
}

fn default_fit_threshold() -> f64 {
    10.0
}

fn default_margin() -> f64 {
    0.1
}

/// Settings of a study of how fast the filter forgets `Y(0) − M(0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgettingStudySpec {
    pub model: ModelSpec,
    pub epsilon: f64,
    /// Initial-error magnitudes δ, each > 0. The δ = 0 baseline is always run.
    pub initial_error_magnitudes: Vec<f64>,
    pub n_paths: usize,
    pub t_grid: Vec<f64>,
    #[serde(default = "default_q_order")]
    pub q_order: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub q0: Option<Vec<Vec<f64>>>,
    /// Direction `u` of the initial error `M(0) = Y(0) + δu`; normalized.
    /// First coordinate axis when absent.
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    /// Points enter the decay fit while `norm_δ(t) ≥ fit_threshold · floor(t)`.
    #[serde(default = "default_fit_threshold")]
    pub fit_threshold: f64,
    /// `c₀` from the pilot stability fit is `c_hat · (1 − margin)`.
    #[serde(default = "default_margin")]
    pub stability_margin: f64,
    /// Extra constant shifts of the filter mean probed by the pilot check.
    #[serde(default)]
    pub stability_offsets: Vec<f64>,
}

impl ForgettingStudySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.initial_error_magnitudes.is_empty()
            || self.initial_error_magnitudes.iter().any(|d| !(*d > 0.0) || !d.is_finite())
        {
            return Err(Error::InvalidParameter(
                "initial_error_magnitudes must be non-empty and > 0".into(),
            ));
        }
        if self.n_paths < 30 {
            return Err(Error::InvalidParameter(format!(
                "n_paths must be >= 30, got {}",
                self.n_paths
            )));
        }
        validate_grid_times("t_grid", &self.t_grid)?;
        if self.t_grid.len() < 3 {
            return Err(Error::InvalidParameter("t_grid needs at least 3 points".into()));
        }
        if !(self.q_order >= 1.0) || !self.q_order.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "q_order must be >= 1, got {}",
                self.q_order
            )));
        }
        if !(self.fit_threshold >= 1.0) {
            return Err(Error::InvalidParameter("fit_threshold must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.stability_margin) {
            return Err(Error::InvalidParameter("stability_margin must lie in [0, 1)".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
            }
        }
        Ok(())
    }
}

/// Exponential fit of the transient for one δ.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaFit {
    pub delta: f64,
    pub c0: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    pub n_fit_points: usize,
    /// Points inside the threshold window whose transient was not positive.
    pub dropped_points: usize,
    pub window_end: Option<f64>,
}

/// Pointwise comparison with `C√ε + Cδe^{−c₀t}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub delta: f64,
    pub t: f64,
    pub norm: f64,
    pub std_error: f64,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForgettingFit {
    /// Mean of the per-δ decay rates.
    pub c0_hat: f64,
    /// 95% path-bootstrap interval for `c0_hat`.
    pub c0_ci: [f64; 2],
    pub per_delta: Vec<DeltaFit>,
    /// Largest `|c0_δ − c0_hat| / c0_hat`.
    pub max_relative_spread: f64,
    pub fit_threshold: f64,
    /// `C = max(c_floor, c_transient)`.
    pub c_fit: f64,
    /// `max_t floor(t) / √ε`.
    pub c_floor: f64,
    /// `max over fitted points of transient / (δ e^{−c0_hat t})`.
    pub c_transient: f64,
    /// Rate implied by the pilot stability fit, `c_hat (1 − margin)`.
    pub c0_from_pilot: Option<f64>,
    pub bound: Vec<BoundCheck>,
    pub dominated: bool,
}

struct Setup<'a> {
    model: &'a dyn ModelCoefficients,
    ic: &'a InitialCondition,
    epsilon: f64,
    dt: f64,
    t_end: f64,
    q0: &'a SpdMat,
    u: &'a [f64],
    deltas: &'a [f64],
    grid: &'a [usize],
}

/// `|Y − M|` on the time grid, for every δ (baseline first), on one path.
fn run_path(s: &Setup<'_>, seed: u64) -> Result<Vec<Vec<f64>>> {
    let cfg = SimConfig { epsilon: s.epsilon, dt: s.dt, t_end: s.t_end, seed, zero_noise: false };
    let traj = simulate(s.model, s.ic, &cfg)?;
    s.deltas
        .iter()
        .map(|&delta| {
            let m0: Vec<f64> = s.ic.y0.iter().zip(s.u).map(|(y, u)| y + delta * u).collect();
            let run = filter_run(s.model, &traj, &m0, s.q0)?;
            Ok(s.grid
                .iter()
                .map(|&k| {
                    let e: Vec<f64> =
                        traj.y_path[k].iter().zip(&run.states[k].m).map(|(y, m)| y - m).collect();
                    norm2(&e)
                })
                .collect())
        })
        .collect()
}

fn plain_moment(values: impl Iterator<Item = f64>, q: f64) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v.abs().powf(q);
        n += 1;
    }
    (s / n as f64).powf(1.0 / q)
}

/// Per-δ decay rates from moment curves `norms[δ][t]` (index 0 is the baseline).
fn fit_rates(
    times: &[f64],
    deltas: &[f64],
    norms: &[Vec<f64>],
    threshold: f64,
) -> Vec<DeltaFit> {
    let floor = &norms[0];
    (1..deltas.len())
        .map(|i| {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut dropped = 0;
            let mut window_end = None;
            for (k, &t) in times.iter().enumerate() {
                if norms[i][k] < threshold * floor[k] {
                    continue;
                }
                let transient = norms[i][k] - floor[k];
                if transient > 0.0 {
                    xs.push(t);
                    ys.push(transient.ln());
                    window_end = Some(t);
                } else {
                    dropped += 1;
                }
            }
            let fit = if xs.len() >= 3 { linear_fit(&xs, &ys).ok() } else { None };
            DeltaFit {
                delta: deltas[i],
                c0: fit.as_ref().map(|f| -f.slope),
                intercept: fit.as_ref().map(|f| f.intercept),
                r2: fit.as_ref().map(|f| f.r2),
                n_fit_points: xs.len(),
                dropped_points: dropped,
                window_end,
            }
        })
        .collect()
}

fn mean_rate(fits: &[DeltaFit]) -> Option<f64> {
    let rates: Vec<f64> = fits.iter().filter_map(|f| f.c0).collect();
    (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Runs the filter from `M(0) = Y(0) + δu` for each δ on common paths,
/// estimates `|Y(t) − M(t)|_q`, fits the exponential decay of the excess over
/// the δ = 0 floor and checks the bound `C√ε + Cδe^{−c₀t}` pointwise.
///
/// A pilot run first checks that the filter linearization is exponentially
/// stable along the filter path; otherwise the study is refused.
pub fn run_forgetting_study(spec: &ForgettingStudySpec) -> Result<StudyReport> {
    spec.validate()?;
    let started = Instant::now();
    let built = spec.model.build(Some(spec.epsilon))?;
    let model = built.model.as_ref();
    let n = model.dims().n;
    let dt = spec.dt.unwrap_or_else(|| default_dt(model));
    let t_end = *spec.t_grid.last().expect("validated non-empty");
    let grid = spec.t_grid.iter().map(|&t| grid_index(t, dt)).collect::<Result<Vec<_>>>()?;
    let q0 = initial_covariance(spec.q0.as_deref(), n)?;
    let u = match &spec.direction {
        Some(d) if d.len() == n && norm2(d) > 0.0 => {
            let l = norm2(d);
            d.iter().map(|v| v / l).collect()
        }
        Some(d) => {
            return Err(Error::InvalidParameter(format!(
                "direction must be a non-zero vector of length {n}, got length {}",
                d.len()
            )))
        }
        None => {
            let mut e = vec![0.0; n];
            e[0] = 1.0;
            e
        }
    };
    let mut deltas = vec![0.0];
    deltas.extend(&spec.initial_error_magnitudes);

    // pilot: stability of the filter linearization along ξ = M
    let pilot_cfg = SimConfig {
        epsilon: spec.epsilon,
        dt,
        t_end,
        seed: split_seed(spec.master_seed, 0),
        zero_noise: false,
    };
    let pilot_traj = simulate(model, &built.ic, &pilot_cfg)?;
    let pilot_run = filter_run(model, &pilot_traj, &built.ic.y0, &q0)?;
    let pilot = filter_stability(
        model,
        &pilot_traj,
        &pilot_run,
        &spec.stability_offsets,
        spec.stability_margin,
    )?;
    if !pilot.stable {
        return Err(Error::NotExponentiallyStable {
            c_hat: pilot.c_hat_min.unwrap_or(f64::NEG_INFINITY),
        });
    }

    let setup = Setup {
        model,
        ic: &built.ic,
        epsilon: spec.epsilon,
        dt,
        t_end,
        q0: &q0,
        u: &u,
        deltas: &deltas,
        grid: &grid,
    };
    let outcomes: Vec<Result<Vec<Vec<f64>>>> = (0..spec.n_paths)
        .into_par_iter()
        .map(|j| run_path(&setup, split_seed(spec.master_seed, j as u64)))
        .collect();
    let failures: Vec<&'static str> =
        outcomes.iter().filter_map(|o| o.as_ref().err().map(|e| e.kind())).collect();
    let ok: Vec<(usize, &Vec<Vec<f64>>)> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(j, o)| o.as_ref().ok().map(|v| (j, v)))
        .collect();
    if ok.len() < 2 {
        return Err(Error::AllPathsFailed { epsilon: spec.epsilon, n_paths: spec.n_paths });
    }
    if !failures.is_empty() {
        warn!("{} of {} forgetting paths failed", failures.len(), spec.n_paths);
    }

    let q = spec.q_order;
    let mut groups = Vec::with_capacity(deltas.len());
    let mut per_path = Vec::new();
    for (i, &delta) in deltas.iter().enumerate() {
        let mut estimates = Vec::with_capacity(grid.len());
        for (k, &t) in spec.t_grid.iter().enumerate() {
            let vals: Vec<f64> = ok.iter().map(|(_, v)| v[i][k]).collect();
            estimates.push(CheckpointEstimate { t, estimate: moment_norm_of_norms(&vals, q)? });
        }
        for (j, v) in &ok {
            for (k, &t) in spec.t_grid.iter().enumerate() {
                per_path.push(PathRecord {
                    parameter: delta,
                    path: *j,
                    seed: split_seed(spec.master_seed, *j as u64),
                    t,
                    value: v[i][k],
                });
            }
        }
        groups.push(GroupReport {
            parameter: delta,
            n_paths: spec.n_paths,
            failed_paths: failures.len(),
            failure_reasons: tally(failures.iter().copied()),
            estimates,
        });
    }

    let norms: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| g.estimates.iter().map(|e| e.estimate.value).collect())
        .collect();
    let per_delta = fit_rates(&spec.t_grid, &deltas, &norms, spec.fit_threshold);
    let c0_hat = mean_rate(&per_delta).ok_or_else(|| {
        Error::DegenerateFit("no initial-error magnitude had 3 usable points above the floor".into())
    })?;
    for f in &per_delta {
        if f.dropped_points > 0 {
            warn!("delta = {}: {} non-positive transient points dropped", f.delta, f.dropped_points);
        }
    }

    // path bootstrap for the interval of c0_hat; the same resampled paths are
    // used for every δ to keep the common random numbers aligned
    let mut rng = ChaCha8Rng::seed_from_u64(spec.master_seed ^ 0xF0_46E7);
    let mut boot = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let idx: Vec<usize> = (0..ok.len()).map(|_| rng.random_range(0..ok.len())).collect();
        let bn: Vec<Vec<f64>> = (0..deltas.len())
            .map(|i| {
                (0..grid.len())
                    .map(|k| plain_moment(idx.iter().map(|&p| ok[p].1[i][k]), q))
                    .collect()
            })
            .collect();
        if let Some(c) = mean_rate(&fit_rates(&spec.t_grid, &deltas, &bn, spec.fit_threshold)) {
            boot.push(c);
        }
    }
    let c0_ci = if boot.len() >= 2 { percentile_interval(&mut boot, 0.95) } else { [c0_hat, c0_hat] };

    let sqrt_eps = spec.epsilon.sqrt();
    let floor = &norms[0];
    let c_floor = floor.iter().fold(0.0f64, |a, &b| a.max(b)) / sqrt_eps;
    let mut c_transient: f64 = 0.0;
    for (i, f) in per_delta.iter().enumerate() {
        if f.c0.is_none() {
            continue;
        }
        for (k, &t) in spec.t_grid.iter().enumerate() {
            let nk = norms[i + 1][k];
            if nk >= spec.fit_threshold * floor[k] && nk > floor[k] {
                c_transient = c_transient.max((nk - floor[k]) / (f.delta * (-c0_hat * t).exp()));
            }
        }
    }
    let c_fit = c_floor.max(c_transient);
    let mut bound = Vec::new();
    for (i, &delta) in deltas.iter().enumerate().skip(1) {
        for (k, &t) in spec.t_grid.iter().enumerate() {
            let est = &groups[i].estimates[k].estimate;
            let b = c_fit * sqrt_eps + c_fit * delta * (-c0_hat * t).exp();
            bound.push(BoundCheck {
                delta,
                t,
                norm: est.value,
                std_error: est.std_error,
                bound: b,
                ok: est.value <= b + est.std_error,
            });
        }
    }
    let dominated = bound.iter().all(|b| b.ok);
    let max_relative_spread = per_delta
        .iter()
        .filter_map(|f| f.c0)
        .map(|c| (c - c0_hat).abs() / c0_hat.abs())
        .fold(0.0, f64::max);
    info!("forgetting: c0_hat = {c0_hat}, C = {c_fit}, dominated = {dominated}");

    let total = spec.n_paths;
    let (status, failed_fraction) = status_for(failures.len(), total);
    Ok(StudyReport {
        schema: StudyReport::SCHEMA,
        kind: StudyKind::Forgetting,
        parameter_name: "delta",
        spec: serde_json::to_value(spec).expect("spec serializes"),
        status,
        total_paths: total,
        failed_paths: failures.len(),
        failed_fraction,
        groups,
        fits: Vec::new(),
        forgetting: Some(ForgettingFit {
            c0_hat,
            c0_ci,
            per_delta,
            max_relative_spread,
            fit_threshold: spec.fit_threshold,
            c_fit,
            c_floor,
            c_transient,
            c0_from_pilot: pilot.c0,
            bound,
            dominated,
        }),
        pilot_stability: Some(pilot),
        oracle: Vec::new(),
        wall_clock: started.elapsed(),
        per_path,
    })
}
