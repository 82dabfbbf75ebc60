use serde::Serialize;

use crate::ekf::FilterRun;
use crate::error::{Error, Result};
use crate::matkit::{loewner_geq, singular_values, Mat};
use crate::models::ModelCoefficients;
use crate::sde::Trajectory;

/// Exponential-stability fit `‖ζ(t)‖ ≈ C e^{−c t}` for `ζ̇ = A ζ`, `ζ(0) = I`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityWitness {
    pub c_hat: f64,
    #[serde(rename = "C_hat")]
    pub big_c_hat: f64,
    /// RMS residual of the log-norm fit.
    pub residual: f64,
    pub grid: Vec<f64>,
}

/// Per-grid-point check of `K̇ ⪰ A K + K Aᵀ + k K` in the Loewner order.
pub fn check_kk_stable(
    a_path: &[Mat],
    k_path: &[Mat],
    kdot_path: &[Mat],
    k_rate: &[f64],
    tol: f64,
) -> Result<Vec<bool>> {
    let n = a_path.len();
    if k_path.len() != n || kdot_path.len() != n || k_rate.len() != n {
        return Err(Error::GridMismatch(format!(
            "path lengths differ: A {}, K {}, K' {}, k {}",
            n,
            k_path.len(),
            kdot_path.len(),
            k_rate.len()
        )));
    }
    (0..n)
        .map(|i| {
            let (a, k) = (&a_path[i], &k_path[i]);
            let rhs = &(&(a * k) + &(k * &a.transpose())) + &k.scale(k_rate[i]);
            let zero = Mat::zeros(k.rows(), k.cols());
            loewner_geq(&(&kdot_path[i] - &rhs).symmetrize(), &zero, tol)
        })
        .collect()
}

fn spectral_norm(m: &Mat) -> f64 {
    if m.rows() == 1 && m.cols() == 1 {
        m[(0, 0)].abs()
    } else {
        singular_values(m)[0]
    }
}

/// Integrates the fundamental matrix with explicit Euler on a uniform grid and
/// fits `log‖ζ(t)‖` against `t` by least squares.
///
/// `ζ` is renormalized as it shrinks, so strongly stable paths do not
/// underflow; growth past `1e300` is an overflow error.
pub fn exp_stability_fit(a_path: &[Mat], dt: f64) -> Result<StabilityWitness> {
    if a_path.len() < 2 {
        return Err(Error::InsufficientSamples("need at least two grid points".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let n = a_path[0].rows();
    let mut zeta = Mat::identity(n);
    let mut log_scale = 0.0;
    let mut grid = Vec::with_capacity(a_path.len());
    let mut log_norms = Vec::with_capacity(a_path.len());
    for (k, a) in a_path.iter().enumerate() {
        let norm = spectral_norm(&zeta);
        if !norm.is_finite() || norm > 1e300 {
            return Err(Error::StabilityOverflow { step: k });
        }
        if norm == 0.0 {
            return Err(Error::DegenerateFit("fundamental matrix collapsed to zero".into()));
        }
        grid.push(k as f64 * dt);
        log_norms.push(log_scale + norm.ln());
        if norm < 1e-100 {
            zeta = zeta.scale(1.0 / norm);
            log_scale += norm.ln();
        }
        if k + 1 < a_path.len() {
            let step = &(a * &zeta).scale(dt);
            zeta = &zeta + step;
        }
    }
    let fit = linear_fit(&grid, &log_norms)?;
    Ok(StabilityWitness {
        c_hat: -fit.slope,
        big_c_hat: fit.intercept.exp(),
        residual: fit.rms,
        grid,
    })
}

pub(crate) struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub rms: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ intercept + slope x`.
pub(crate) fn linear_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::InsufficientSamples(format!("line fit needs >= 2 points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LineFit { slope, intercept, rms: (ss_res / nf).sqrt(), r2 })
}

/// `A(t) = ∇f(t, ξ(t), Z(t)) − G(t) ∇h(t, ξ(t), Z(t))` along the filter gains
/// of `run` and a chosen adapted path `xi`.
pub fn linearization_path(
    model: &dyn ModelCoefficients,
    traj: &Trajectory,
    run: &FilterRun,
    xi: &[Vec<f64>],
) -> Result<Vec<Mat>> {
    if xi.len() != run.gains.len() || traj.times.len() != run.gains.len() {
        return Err(Error::GridMismatch(format!(
            "xi has {} points, filter run {}, trajectory {}",
            xi.len(),
            run.gains.len(),
            traj.times.len()
        )));
    }
    Ok((0..xi.len())
        .map(|k| {
            let (t, z) = (traj.times[k], &traj.z_path[k]);
            let gf = model.grad_f(t, &xi[k], z);
            let gh = model.grad_h(t, &xi[k], z);
            &gf - &(&run.gains[k] * &gh)
        })
        .collect())
}

/// Stability of the filter linearization along the filter mean and along
/// constant shifts of it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterStabilityReport {
    /// Offsets added to every coordinate of `M(t)`; `0` is the filter path.
    pub offsets: Vec<f64>,
    pub witnesses: Vec<Option<StabilityWitness>>,
    /// Smallest fitted rate over the probed paths (`None` if any overflowed).
    pub c_hat_min: Option<f64>,
    /// For scalar problems, the largest sampled `A(t)` over all probed paths.
    pub max_scalar_a: Option<f64>,
    /// `c_hat_min · (1 − margin)` when positive.
    pub c0: Option<f64>,
    pub margin: f64,
    pub stable: bool,
    /// The hypothesis quantifies over every adapted path; only these were probed.
    pub coverage: String,
}

pub fn filter_stability(
    model: &dyn ModelCoefficients,
    traj: &Trajectory,
    run: &FilterRun,
    offsets: &[f64],
    margin: f64,
) -> Result<FilterStabilityReport> {
    let mut offsets = offsets.to_vec();
    if !offsets.contains(&0.0) {
        offsets.insert(0, 0.0);
    }
    let mut witnesses = Vec::with_capacity(offsets.len());
    let mut max_scalar_a: Option<f64> = None;
    for &off in &offsets {
        let xi: Vec<Vec<f64>> =
            run.states.iter().map(|s| s.m.iter().map(|v| v + off).collect()).collect();
        let a_path = linearization_path(model, traj, run, &xi)?;
        if a_path[0].rows() == 1 {
            let m = a_path.iter().map(|a| a[(0, 0)]).fold(f64::NEG_INFINITY, f64::max);
            max_scalar_a = Some(max_scalar_a.map_or(m, |x| x.max(m)));
        }
        match exp_stability_fit(&a_path, traj.dt) {
            Ok(w) => witnesses.push(Some(w)),
            Err(Error::StabilityOverflow { .. }) => witnesses.push(None),
            Err(e) => return Err(e),
        }
    }
    let c_hat_min = witnesses
        .iter()
        .map(|w| w.as_ref().map(|w| w.c_hat))
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.into_iter().fold(f64::INFINITY, f64::min));
    let stable = c_hat_min.is_some_and(|c| c > 0.0);
    Ok(FilterStabilityReport {
        c0: c_hat_min.filter(|c| *c > 0.0).map(|c| c * (1.0 - margin)),
        coverage: format!(
            "{} adapted paths probed (filter mean plus constant shifts); not a proof over all adapted paths",
            offsets.len()
        ),
        offsets,
        witnesses,
        c_hat_min,
        max_scalar_a,
        margin,
        stable,
    })
}

/// Trace monitors `p = tr Q`, `p̄ = tr Q⁻¹` along a filter run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceMonitor {
    pub p_min: f64,
    pub p_max: f64,
    pub p_bar_max: f64,
    pub product_max: f64,
    /// `n² · max κ(Q)`, an a-priori ceiling for `p · p̄`.
    pub product_ceiling: f64,
    pub bounded: bool,
}

pub fn trace_monitor(run: &FilterRun) -> Result<TraceMonitor> {
    let mut p_min = f64::INFINITY;
    let mut p_max: f64 = 0.0;
    let mut p_bar_max: f64 = 0.0;
    let mut product_max: f64 = 0.0;
    let mut cond_max: f64 = 1.0;
    let n = run.states[0].q.dim() as f64;
    for s in &run.states {
        let eig = crate::matkit::sym_eigen(s.q.as_mat())?;
        let p: f64 = eig.values.iter().sum();
        let p_bar: f64 = eig.values.iter().map(|l| 1.0 / l).sum();
        p_min = p_min.min(p);
        p_max = p_max.max(p);
        p_bar_max = p_bar_max.max(p_bar);
        product_max = product_max.max(p * p_bar);
        cond_max = cond_max.max(eig.values[eig.values.len() - 1] / eig.values[0]);
    }
    let product_ceiling = n * n * cond_max;
    Ok(TraceMonitor {
        p_min,
        p_max,
        p_bar_max,
        product_max,
        product_ceiling,
        bounded: p_max.is_finite()
            && p_bar_max.is_finite()
            && product_max <= product_ceiling * (1.0 + 1e-10),
    })
}
