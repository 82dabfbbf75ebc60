use serde::Serialize;

use crate::ekf::{FilterRun, FilterState};
use crate::error::{Error, Result};
use crate::matkit::{cholesky, Mat, SpdMat};
use crate::models::ModelCoefficients;

/// Discrete-time Kalman recursion on the Euler-discretized linear model
///
/// ```text
/// Y_{k+1} = F Y_k + w_k,   ΔZ_k = H Y_k + v_k
/// F = I + A dt,  H = H_mat dt
/// Cov(w) = ε(S Sᵀ + G Gᵀ) dt,  Cov(v) = ε L Lᵀ dt,  Cov(w, v) = ε G Lᵀ dt
/// ```
///
/// using the one-step predictor for correlated process and measurement noise:
/// `K = (F P Hᵀ + C)(H P Hᵀ + R)⁻¹`, `m ← F m + K(ΔZ − H m)`,
/// `P ← F P Fᵀ + W − K(H P Hᵀ + R)Kᵀ`.
///
/// The returned run stores `P / ε` so it is directly comparable with the
/// scaled covariance of the EKF; `gains` holds `K / dt`.
pub fn discrete_kalman_oracle(
    model: &dyn ModelCoefficients,
    dz: &[Vec<f64>],
    m0: &[f64],
    q0: &SpdMat,
    epsilon: f64,
    dt: f64,
) -> Result<FilterRun> {
    let lin = model.as_linear().ok_or(Error::NotLinear)?;
    if !(epsilon > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon and dt must be > 0, got {epsilon}, {dt}"
        )));
    }
    let dims = model.dims();
    if m0.len() != dims.n || q0.dim() != dims.n {
        return Err(Error::DimensionMismatch {
            op: "discrete_kalman_oracle",
            expected: format!("state dimension {}", dims.n),
            found: format!("m0 {}, q0 {}", m0.len(), q0.dim()),
        });
    }
    let f = &Mat::identity(dims.n) + &lin.a.scale(dt);
    let h = lin.h_mat.scale(dt);
    let w = (&(&lin.s * &lin.s.transpose()) + &(&lin.g_mat * &lin.g_mat.transpose()))
        .scale(epsilon * dt);
    let r = (&lin.l_mat * &lin.l_mat.transpose()).scale(epsilon * dt);
    let c = (&lin.g_mat * &lin.l_mat.transpose()).scale(epsilon * dt);

    let mut m = m0.to_vec();
    let mut p = q0.as_mat().scale(epsilon);
    let mut states = Vec::with_capacity(dz.len() + 1);
    let mut gains = Vec::with_capacity(dz.len() + 1);
    for k in 0..=dz.len() {
        let s = (&(&(&h * &p) * &h.transpose()) + &r).symmetrize();
        let cross = &(&(&f * &p) * &h.transpose()) + &c;
        let s_inv = cholesky(&s)?.inverse();
        let gain = &cross * &s_inv;
        states.push(FilterState {
            t: k as f64 * dt,
            m: m.clone(),
            q: SpdMat::new_unchecked(p.scale(1.0 / epsilon)),
        });
        gains.push(gain.scale(1.0 / dt));
        if k == dz.len() {
            break;
        }
        if dz[k].len() != dims.d {
            return Err(Error::GridMismatch(format!(
                "observation increment {k} has length {}, expected {}",
                dz[k].len(),
                dims.d
            )));
        }
        let hm = h.mul_vec(&m);
        let innovation: Vec<f64> = (0..dims.d).map(|i| dz[k][i] - hm[i]).collect();
        let fm = f.mul_vec(&m);
        let corr = gain.mul_vec(&innovation);
        m = (0..dims.n).map(|i| fm[i] + corr[i]).collect();
        let pred = &(&(&f * &p) * &f.transpose()) + &w;
        p = (&pred - &(&(&gain * &s) * &gain.transpose())).symmetrize();
    }
    Ok(FilterRun {
        epsilon,
        states,
        gains,
        scaled_errors: None,
        projection_events: 0,
        dust_clips: 0,
        regularization_events: 0,
    })
}

/// Agreement between two filter runs on the same grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleComparison {
    pub epsilon: f64,
    pub n_points: usize,
    /// RMS over grid points and coordinates of the mean difference.
    pub mean_rms: f64,
    /// Max absolute difference of the scaled covariances `Q`.
    pub scaled_cov_max_abs: f64,
    /// Max absolute difference of the covariances `εQ`.
    pub cov_max_abs: f64,
}

pub fn compare_runs(a: &FilterRun, b: &FilterRun) -> Result<OracleComparison> {
    if a.states.len() != b.states.len() {
        return Err(Error::GridMismatch(format!(
            "{} vs {} grid points",
            a.states.len(),
            b.states.len()
        )));
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut q_max: f64 = 0.0;
    for (x, y) in a.states.iter().zip(&b.states) {
        for (u, v) in x.m.iter().zip(&y.m) {
            sq += (u - v) * (u - v);
            count += 1;
        }
        q_max = q_max.max((x.q.as_mat() - y.q.as_mat()).max_abs());
    }
    Ok(OracleComparison {
        epsilon: a.epsilon,
        n_points: a.states.len(),
        mean_rms: (sq / count as f64).sqrt(),
        scaled_cov_max_abs: q_max,
        cov_max_abs: q_max * a.epsilon,
    })
}

/// Observation increments `Z_{k+1} − Z_k` of a path.
pub fn observation_increments(z_path: &[Vec<f64>]) -> Vec<Vec<f64>> {
    z_path
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
        .collect()
}
