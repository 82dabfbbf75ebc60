//! Monte-Carlo studies of the filter error: its order in ε, and the
//! forgetting of the initial estimation error.
//!
//! Every path draws its noise from `split_seed(master_seed, path_index)`, and
//! the same path seeds are reused across ε values and initial-error
//! magnitudes (common random numbers). Paths run in parallel, results are
//! collected in path order and reduced sequentially, so reports are
//! bit-identical whatever the thread count.

mod convergence;
mod forgetting;
mod oracle;

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{MomentEstimate, FilterStabilityReport};
use crate::error::{Error, Result};
use crate::export::{fmt_f64, write_header};
use crate::matkit::{Mat, SpdMat};
use crate::models::{CubicObservationModel, InitialCondition, LinearModel, ModelCoefficients, SisParams};

pub use convergence::{run_convergence_study, ConvergenceStudySpec};
pub use forgetting::{run_forgetting_study, BoundCheck, DeltaFit, ForgettingFit, ForgettingStudySpec};
pub use oracle::{compare_runs, discrete_kalman_oracle, observation_increments, OracleComparison};

/// Fraction of failed paths at or above which a study is DEGRADED.
pub const DEGRADED_FAILURE_FRACTION: f64 = 0.05;

/// Linear model parameters as nested rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    pub a: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    #[serde(default)]
    pub z0: Option<Vec<f64>>,
}

impl LinearSpec {
    /// Scalar model `a, h, s, g, l` started at the origin.
    pub fn scalar(a: f64, h: f64, s: f64, g: f64, l: f64) -> Self {
        Self {
            a: vec![vec![a]],
            h: vec![vec![h]],
            s: vec![vec![s]],
            g: vec![vec![g]],
            l: vec![vec![l]],
            y0: None,
            z0: None,
        }
    }

    /// The scalar benchmark `a = −1, h = 1, s = 1, g = 0.5, l = 1`.
    pub fn benchmark() -> Self {
        Self::scalar(-1.0, 1.0, 1.0, 0.5, 1.0)
    }
}

fn nested_to_mat(name: &str, rows: &[Vec<f64>]) -> Result<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidParameter(format!(
            "{name} must be a non-empty rectangular matrix"
        )));
    }
    Mat::new(rows.len(), cols, rows.concat())
}

/// Which model a study runs on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Linear(LinearSpec),
    Sis(SisParams),
    /// Planted counterexample with `h(y) = y³`.
    Cubic,
}

/// A model instance together with its starting point.
#[derive(Debug)]
pub struct BuiltModel {
    pub model: Box<dyn ModelCoefficients>,
    pub ic: InitialCondition,
}

impl ModelSpec {
    /// Builds the model. For SI±S, `epsilon` (if given) overrides the population
    /// through `N = ε⁻²`.
    pub fn build(&self, epsilon: Option<f64>) -> Result<BuiltModel> {
        match self {
            ModelSpec::Linear(spec) => {
                let m = LinearModel::new(
                    nested_to_mat("a", &spec.a)?,
                    nested_to_mat("h", &spec.h)?,
                    nested_to_mat("s", &spec.s)?,
                    nested_to_mat("g", &spec.g)?,
                    nested_to_mat("l", &spec.l)?,
                )?;
                let dims = m.dims();
                let ic = InitialCondition {
                    y0: spec.y0.clone().unwrap_or_else(|| vec![0.0; dims.n]),
                    z0: spec.z0.clone().unwrap_or_else(|| vec![0.0; dims.d]),
                };
                if ic.y0.len() != dims.n || ic.z0.len() != dims.d {
                    return Err(Error::DimensionMismatch {
                        op: "linear model initial condition",
                        expected: format!("y0 of length {}, z0 of length {}", dims.n, dims.d),
                        found: format!("{}, {}", ic.y0.len(), ic.z0.len()),
                    });
                }
                Ok(BuiltModel { model: Box::new(m), ic })
            }
            ModelSpec::Sis(p) => {
                let p = match epsilon {
                    Some(e) => p.with_epsilon(e),
                    None => p.clone(),
                };
                let (m, ic, _) = crate::models::sis_scaled_model(p)?;
                Ok(BuiltModel { model: Box::new(m), ic })
            }
            ModelSpec::Cubic => Ok(BuiltModel {
                model: Box::new(CubicObservationModel),
                ic: InitialCondition { y0: vec![0.0], z0: vec![0.0] },
            }),
        }
    }

    pub fn is_sis(&self) -> bool {
        matches!(self, ModelSpec::Sis(_))
    }
}

/// Builds the initial scaled covariance, identity when `rows` is `None`.
pub fn initial_covariance(rows: Option<&[Vec<f64>]>, n: usize) -> Result<SpdMat> {
    match rows {
        None => Ok(SpdMat::identity(n)),
        Some(r) => {
            let m = nested_to_mat("q0", r)?;
            if m.shape() != (n, n) {
                return Err(Error::DimensionMismatch {
                    op: "initial covariance",
                    expected: format!("{n}x{n}"),
                    found: format!("{}x{}", m.rows(), m.cols()),
                });
            }
            SpdMat::new(m)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Convergence,
    Forgetting,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StudyStatus {
    #[serde(rename = "VALID")]
    Valid,
    #[serde(rename = "DEGRADED")]
    Degraded,
}

/// Moment estimate of the error at one time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointEstimate {
    pub t: f64,
    #[serde(flatten)]
    pub estimate: MomentEstimate,
}

/// Results for one ε (convergence) or one initial-error magnitude (forgetting).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupReport {
    pub parameter: f64,
    pub n_paths: usize,
    pub failed_paths: usize,
    pub failure_reasons: BTreeMap<String, usize>,
    pub estimates: Vec<CheckpointEstimate>,
}

/// Order-in-ε fit at one checkpoint and moment order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub t: f64,
    pub q_order: f64,
    pub status: String,
    pub alpha_hat: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    /// 95% parametric-bootstrap interval for `alpha_hat`.
    pub alpha_ci: Option<[f64; 2]>,
}

/// Raw error norm of one path at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub parameter: f64,
    pub path: usize,
    pub seed: u64,
    pub t: f64,
    pub value: f64,
}

/// Outcome of a study; serializes as schema `study-v1`.
#[derive(Clone, Debug, Serialize)]
pub struct StudyReport {
    pub schema: &'static str,
    pub kind: StudyKind,
    /// Name of the per-group parameter: `epsilon` or `delta`.
    pub parameter_name: &'static str,
    pub spec: serde_json::Value,
    pub status: StudyStatus,
    pub total_paths: usize,
    pub failed_paths: usize,
    pub failed_fraction: f64,
    pub groups: Vec<GroupReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<RateFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forgetting: Option<ForgettingFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pilot_stability: Option<FilterStabilityReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub oracle: Vec<OracleComparison>,
    /// Kept out of the JSON so that reruns are byte-identical.
    #[serde(skip)]
    pub wall_clock: Duration,
    #[serde(skip)]
    pub per_path: Vec<PathRecord>,
}

impl StudyReport {
    pub const SCHEMA: &'static str = "study-v1";

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-path CSV `<parameter>,path,seed,t,err_norm`.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        write_header(w, &[self.parameter_name, "path", "seed", "t", "err_norm"])?;
        for r in &self.per_path {
            let line = format!(
                "{},{},{},{},{}\r\n",
                fmt_f64(r.parameter),
                r.path,
                r.seed,
                fmt_f64(r.t),
                fmt_f64(r.value)
            );
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

fn status_for(failed: usize, total: usize) -> (StudyStatus, f64) {
    let frac = if total == 0 { 0.0 } else { failed as f64 / total as f64 };
    let status = if frac < DEGRADED_FAILURE_FRACTION { StudyStatus::Valid } else { StudyStatus::Degraded };
    (status, frac)
}

fn tally(errors: impl IntoIterator<Item = &'static str>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for e in errors {
        *m.entry(e.to_string()).or_insert(0) += 1;
    }
    m
}

fn validate_grid_times(name: &str, times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} must not be empty")));
    }
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0")));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

/// Grid index of `t`, requiring it to lie on the grid.
fn grid_index(t: f64, dt: f64) -> Result<usize> {
    let k = (t / dt).round();
    if (k * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::GridMismatch(format!("time {t} is not a multiple of dt = {dt}")));
    }
    Ok(k as usize)
}
