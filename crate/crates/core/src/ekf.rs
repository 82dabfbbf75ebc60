//! Continuous-time extended Kalman filter with correlated, state-dependent
//! observation noise.
//!
//! The filter state is the mean `M` and the *scaled* covariance
//! `Q = Q^ε / ε`. With every coefficient evaluated at `(t, M, Z(t))`:
//!
//! ```text
//! G  = [g ℓᵀ + Q ∇hᵀ] (ℓℓᵀ)⁻¹
//! dM = f dt + G (dZ − h dt)
//! dQ/dt = [∇f − gℓᵀ(ℓℓᵀ)⁻¹∇h] Q + Q [·]ᵀ − Q ∇hᵀ(ℓℓᵀ)⁻¹∇h Q + a
//! a  = σσᵀ + g (I − ℓᵀ(ℓℓᵀ)⁻¹ℓ) gᵀ
//! ```
//!
//! `a` uses the plus sign: `I − ℓᵀ(ℓℓᵀ)⁻¹ℓ` is an orthogonal projection, so
//! `a` stays positive semi-definite. (One statement of the ellipticity
//! hypothesis elsewhere writes this term with a minus sign; the covariance
//! equation itself carries the plus.)
//!
//! Both equations are stepped with explicit Euler on the trajectory's own grid,
//! and `Q` is symmetrized and projected back onto the SPD cone after each step.

use std::io::{self, Write};

use log::debug;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::export::{fmt_f64, write_header};
use crate::matkit::{cholesky, jacobi_eigen, sqrt_spd, Mat, SpdMat};
use crate::models::ModelCoefficients;
use crate::sde::Trajectory;

/// Smallest eigenvalue of `ℓℓᵀ`, relative to its trace, below which
/// Tikhonov regularization kicks in.
const REGULARIZE_BELOW: f64 = 1e-12;
/// Tikhonov weight, relative to `tr(ℓℓᵀ)`.
const TIKHONOV: f64 = 1e-10;

/// All coefficients of a model evaluated at one `(t, m, z)`, with the
/// observation-noise inverse `(ℓℓᵀ)⁻¹` precomputed.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub f: Vec<f64>,
    pub h: Vec<f64>,
    pub grad_f: Mat,
    pub grad_h: Mat,
    pub sigma: Mat,
    pub g: Mat,
    pub ell: Mat,
    /// `(ℓℓᵀ)⁻¹`.
    pub r_inv: Mat,
    /// Whether `ℓℓᵀ` needed Tikhonov regularization.
    pub regularized: bool,
}

impl Linearization {
    pub fn at(model: &dyn ModelCoefficients, t: f64, m: &[f64], z: &[f64]) -> Result<Self> {
        let f = model.f(t, m, z);
        let h = model.h(t, m, z);
        let grad_f = model.grad_f(t, m, z);
        let grad_h = model.grad_h(t, m, z);
        let sigma = model.sigma(t, m, z);
        let g = model.g(t, m, z);
        let ell = model.ell(t, m, z);
        let finite = f.iter().chain(&h).all(|x| x.is_finite())
            && [&grad_f, &grad_h, &sigma, &g, &ell].iter().all(|x| x.all_finite());
        if !finite {
            return Err(Error::NonFinite);
        }
        let (r_inv, regularized) = noise_inverse(&(&ell * &ell.transpose()))?;
        Ok(Self { f, h, grad_f, grad_h, sigma, g, ell, r_inv, regularized })
    }

    /// `G = [g ℓᵀ + Q ∇hᵀ] (ℓℓᵀ)⁻¹`.
    pub fn gain(&self, q: &Mat) -> Mat {
        let cross = &(&self.g * &self.ell.transpose()) + &(q * &self.grad_h.transpose());
        &cross * &self.r_inv
    }

    /// `a = σσᵀ + g (I − ℓᵀ(ℓℓᵀ)⁻¹ℓ) gᵀ`.
    pub fn a_matrix(&self) -> Mat {
        let d2 = self.ell.cols();
        let proj = &Mat::identity(d2) - &(&(&self.ell.transpose() * &self.r_inv) * &self.ell);
        let ss = &self.sigma * &self.sigma.transpose();
        let gpg = &(&self.g * &proj) * &self.g.transpose();
        (&ss + &gpg).symmetrize()
    }

    /// Right-hand side of the scaled Riccati equation, symmetrized.
    pub fn riccati_rhs(&self, q: &Mat) -> Mat {
        let glr = &(&self.g * &self.ell.transpose()) * &self.r_inv;
        let drift = &self.grad_f - &(&glr * &self.grad_h);
        let info = &(&self.grad_h.transpose() * &self.r_inv) * &self.grad_h;
        let dq = &(&drift * q) + &(q * &drift.transpose());
        let quad = &(q * &info) * q;
        (&(&dq - &quad) + &self.a_matrix()).symmetrize()
    }
}

/// `(ℓℓᵀ)⁻¹` by Cholesky, with one Tikhonov retry when `ℓℓᵀ` is nearly
/// singular.
fn noise_inverse(r: &Mat) -> Result<(Mat, bool)> {
    let tr = r.trace();
    if !(tr > 0.0) {
        return Err(Error::SingularObservationNoise);
    }
    let lam_min = if r.rows() == 1 {
        r[(0, 0)]
    } else {
        jacobi_eigen(&r.symmetrize()).values[0]
    };
    if lam_min >= REGULARIZE_BELOW * tr {
        if let Ok(ch) = cholesky(r) {
            return Ok((ch.inverse(), false));
        }
    }
    let reg = &r.symmetrize() + &Mat::identity(r.rows()).scale(TIKHONOV * tr);
    debug!("regularizing observation noise covariance (min eig {lam_min:e}, trace {tr:e})");
    match cholesky(&reg) {
        Ok(ch) => Ok((ch.inverse(), true)),
        Err(_) => Err(Error::SingularObservationNoise),
    }
}

/// Filter gain `[gℓᵀ + Q∇hᵀ](ℓℓᵀ)⁻¹` at `(t, m, z)`.
pub fn gain(model: &dyn ModelCoefficients, t: f64, m: &[f64], z: &[f64], q: &Mat) -> Result<Mat> {
    Ok(Linearization::at(model, t, m, z)?.gain(q))
}

/// Scaled Riccati right-hand side at `(t, m, z)`.
pub fn riccati_rhs(
    model: &dyn ModelCoefficients,
    t: f64,
    m: &[f64],
    z: &[f64],
    q: &Mat,
) -> Result<Mat> {
    Ok(Linearization::at(model, t, m, z)?.riccati_rhs(q))
}

/// What [`project_spd`] had to do.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionEvent {
    /// Input already had every eigenvalue ≥ floor.
    None,
    /// Eigenvalues in `[-floor, floor)` were lifted to the floor.
    Dust,
    /// An eigenvalue below `-floor` was clipped.
    Hard,
}

/// Eigenvalue floor used by [`project_spd`]: `1e-12 · max(1, tr(q))`.
pub fn spd_floor(q: &Mat) -> f64 {
    1e-12 * q.trace().max(1.0)
}

/// Symmetrizes `q_raw` and clips its eigenvalues below at `floor`
/// (default [`spd_floor`]).
pub fn project_spd(q_raw: &Mat, floor: Option<f64>) -> Result<(SpdMat, ProjectionEvent)> {
    if !q_raw.is_square() {
        return Err(Error::DimensionMismatch {
            op: "project_spd",
            expected: "square matrix".into(),
            found: format!("{}x{}", q_raw.rows(), q_raw.cols()),
        });
    }
    if !q_raw.all_finite() {
        return Err(Error::NonFinite);
    }
    let q = q_raw.symmetrize();
    let floor = floor.unwrap_or_else(|| spd_floor(&q));
    if q.rows() == 1 {
        let v = q[(0, 0)];
        return Ok(if v >= floor {
            (SpdMat::new_unchecked(q), ProjectionEvent::None)
        } else {
            let ev = if v >= -floor { ProjectionEvent::Dust } else { ProjectionEvent::Hard };
            (SpdMat::new_unchecked(Mat::scalar(floor)), ev)
        });
    }
    let eig = jacobi_eigen(&q);
    let lam_min = eig.values[0];
    if lam_min >= floor {
        return Ok((SpdMat::new_unchecked(q), ProjectionEvent::None));
    }
    let event = if lam_min >= -floor { ProjectionEvent::Dust } else { ProjectionEvent::Hard };
    let clipped = eig.reconstruct_with(|l| l.max(floor));
    Ok((SpdMat::new_unchecked(clipped), event))
}

/// Filter output at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterState {
    pub t: f64,
    /// Estimate mean `M(t)`.
    pub m: Vec<f64>,
    /// Scaled covariance `Q(t) = Q^ε(t) / ε`.
    pub q: SpdMat,
}

/// Filter states, gains and (when the truth is known) scaled errors
/// `Q^{-1/2}(Y − M)` on the driving trajectory's grid.
#[derive(Clone, Debug, Serialize)]
pub struct FilterRun {
    pub epsilon: f64,
    pub states: Vec<FilterState>,
    pub gains: Vec<Mat>,
    pub scaled_errors: Option<Vec<Vec<f64>>>,
    pub projection_events: usize,
    pub dust_clips: usize,
    pub regularization_events: usize,
}

/// JSON summary of a [`FilterRun`].
#[derive(Clone, Debug, Serialize)]
pub struct FilterSummary {
    pub epsilon: f64,
    pub steps: usize,
    pub final_t: f64,
    pub final_m: Vec<f64>,
    pub final_q: Mat,
    /// `ε Q` at the final time.
    pub final_covariance: Mat,
    pub final_scaled_err_norm: Option<f64>,
    pub projection_events: usize,
    pub dust_clips: usize,
    pub regularization_events: usize,
}

impl FilterRun {
    pub fn scaled_error_norms(&self) -> Option<Vec<f64>> {
        self.scaled_errors
            .as_ref()
            .map(|e| e.iter().map(|v| crate::matkit::norm2(v)).collect())
    }

    pub fn summary(&self) -> FilterSummary {
        let last = self.states.last().expect("filter run has at least one state");
        FilterSummary {
            epsilon: self.epsilon,
            steps: self.states.len() - 1,
            final_t: last.t,
            final_m: last.m.clone(),
            final_q: last.q.as_mat().clone(),
            final_covariance: last.q.scale(self.epsilon),
            final_scaled_err_norm: self.scaled_error_norms().and_then(|v| v.last().copied()),
            projection_events: self.projection_events,
            dust_clips: self.dust_clips,
            regularization_events: self.regularization_events,
        }
    }

    /// CSV `t,m_1..m_n,q_11..q_nn,scaled_err_norm`; the last column is empty
    /// when no truth was available.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        let n = self.states[0].m.len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("m_{i}")));
        for i in 1..=n {
            for j in 1..=n {
                header.push(format!("q_{i}{j}"));
            }
        }
        header.push("scaled_err_norm".into());
        write_header(w, &header)?;
        let norms = self.scaled_error_norms();
        for (k, s) in self.states.iter().enumerate() {
            let mut fields: Vec<String> = std::iter::once(s.t)
                .chain(s.m.iter().copied())
                .chain(s.q.as_slice().iter().copied())
                .map(fmt_f64)
                .collect();
            fields.push(norms.as_ref().map(|v| fmt_f64(v[k])).unwrap_or_default());
            w.write_all(fields.join(",").as_bytes())?;
            w.write_all(b"\r\n")?;
        }
        Ok(())
    }
}

/// `Q^{-1/2} e`, computed as the solution of `S x = e` with `S = Q^{1/2}`.
pub fn scaled_error(q: &SpdMat, e: &[f64]) -> Result<Vec<f64>> {
    if q.dim() == 1 {
        return Ok(vec![e[0] / q[(0, 0)].sqrt()]);
    }
    let s = sqrt_spd(q)?;
    Ok(cholesky(&s)?.solve_vec(e))
}

/// Runs the filter along `traj`, driven by its observation increments.
///
/// Scaled errors are recorded because the trajectory carries the true signal.
pub fn filter_run(
    model: &dyn ModelCoefficients,
    traj: &Trajectory,
    m0: &[f64],
    q0: &SpdMat,
) -> Result<FilterRun> {
    let dims = model.dims();
    if m0.len() != dims.n || q0.dim() != dims.n {
        return Err(Error::DimensionMismatch {
            op: "filter_run",
            expected: format!("m0 of length {0} and {0}x{0} q0", dims.n),
            found: format!("m0 of length {}, q0 {}x{}", m0.len(), q0.dim(), q0.dim()),
        });
    }
    if traj.y_path.first().map(Vec::len) != Some(dims.n)
        || traj.z_path.first().map(Vec::len) != Some(dims.d)
    {
        return Err(Error::GridMismatch("trajectory dimensions differ from the model".into()));
    }
    let dt = traj.dt;
    let steps = traj.steps();
    let mut states = Vec::with_capacity(steps + 1);
    let mut gains = Vec::with_capacity(steps + 1);
    let mut m = m0.to_vec();
    let mut q = q0.clone();
    let mut projection_events = 0;
    let mut dust_clips = 0;
    let mut regularization_events = 0;

    for k in 0..=steps {
        let t = traj.times[k];
        let z = &traj.z_path[k];
        let lin = Linearization::at(model, t, &m, z).map_err(|e| match e {
            Error::NonFinite => Error::Inadmissible { step: k, t },
            other => other,
        })?;
        if lin.regularized {
            regularization_events += 1;
        }
        let g = lin.gain(&q);
        states.push(FilterState { t, m: m.clone(), q: q.clone() });
        if k == steps {
            gains.push(g);
            break;
        }
        let dz = &traj.z_path[k + 1];
        let innovation: Vec<f64> = (0..dims.d).map(|i| dz[i] - z[i] - lin.h[i] * dt).collect();
        let correction = g.mul_vec(&innovation);
        for i in 0..dims.n {
            m[i] += lin.f[i] * dt + correction[i];
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1, t: traj.times[k + 1] });
        }
        let q_raw = q.as_mat() + &lin.riccati_rhs(&q).scale(dt);
        let (q_next, event) =
            project_spd(&q_raw, None).map_err(|_| Error::CovarianceBreakdown { step: k + 1 })?;
        match event {
            ProjectionEvent::None => {}
            ProjectionEvent::Dust => dust_clips += 1,
            ProjectionEvent::Hard => {
                debug!("hard SPD projection at step {}", k + 1);
                projection_events += 1;
            }
        }
        q = q_next;
        gains.push(g);
    }

    let scaled_errors = states
        .iter()
        .zip(&traj.y_path)
        .map(|(s, y)| {
            let e: Vec<f64> = y.iter().zip(&s.m).map(|(a, b)| a - b).collect();
            scaled_error(&s.q, &e)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(FilterRun {
        epsilon: traj.epsilon,
        states,
        gains,
        scaled_errors: Some(scaled_errors),
        projection_events,
        dust_clips,
        regularization_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{sis_scaled_model, LinearModel, SisParams};

    #[test]
    fn gain_formula_arithmetic() {
        // g = 0, Q = 1, ∇h = 2, ℓ = 1  =>  G = 2
        let m = LinearModel::scalar(0.0, 2.0, 1.0, 0.0, 1.0).unwrap();
        let g = gain(&m, 0.0, &[0.0], &[0.0], &Mat::scalar(1.0)).unwrap();
        assert!((g[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn pure_correlation_gain() {
        // Q = 0, g = 1, ℓ = 1  =>  G = gℓᵀ/ℓℓᵀ = 1
        let m = LinearModel::scalar(0.0, 3.0, 1.0, 1.0, 1.0).unwrap();
        let g = gain(&m, 0.0, &[0.0], &[0.0], &Mat::scalar(0.0)).unwrap();
        assert!((g[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sis_gain_hand_value() {
        // ε = 1 (N = 1) so that ∇h = α and the fractions equal x0.
        let p = SisParams { population: 1.0, ..SisParams::default() };
        let (m, ic, _) = sis_scaled_model(p).unwrap();
        let g = gain(&m, 0.0, &ic.y0, &ic.z0, &Mat::scalar(0.5)).unwrap();
        let expected = (-0.02 + 0.5 * 0.2) / 0.0275;
        assert!((g[(0, 0)] - expected).abs() < 1e-12);
        assert!((g[(0, 0)] - 2.909).abs() < 1e-3);
    }

    #[test]
    fn scalar_riccati_steady_states() {
        let m = LinearModel::scalar(0.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let r = riccati_rhs(&m, 0.0, &[0.0], &[0.0], &Mat::scalar(1.0)).unwrap();
        assert!(r[(0, 0)].abs() < 1e-15);
        // s = 2, l = 3, h = 1: Q* = s l / h = 6
        let m = LinearModel::scalar(0.0, 1.0, 2.0, 0.0, 3.0).unwrap();
        let r = riccati_rhs(&m, 0.0, &[0.0], &[0.0], &Mat::scalar(6.0)).unwrap();
        assert!(r[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn sis_a_term_hand_value() {
        let p = SisParams { population: 1.0, ..SisParams::default() };
        let (m, ic, _) = sis_scaled_model(p).unwrap();
        let lin = Linearization::at(&m, 0.0, &ic.y0, &ic.z0).unwrap();
        let a = lin.a_matrix()[(0, 0)];
        let expected = 0.0725 - 0.0004 / 0.0275;
        assert!((a - expected).abs() < 1e-14);
        assert!((a - 0.05795).abs() < 1e-5);
    }

    #[test]
    fn projection_cases() {
        let spd = Mat::from_rows(&[[2.0, 0.5], [0.5, 1.0]]);
        let (p, ev) = project_spd(&spd, None).unwrap();
        assert_eq!(ev, ProjectionEvent::None);
        assert_eq!(p.as_mat(), &spd);

        let floor = spd_floor(&Mat::from_diag(&[1.0, -1e-15]));
        let (p, ev) = project_spd(&Mat::from_diag(&[1.0, -1e-15]), None).unwrap();
        assert_eq!(ev, ProjectionEvent::Dust);
        assert!((p.as_mat() - &Mat::from_diag(&[1.0, floor])).max_abs() < 1e-15);

        let raw = Mat::from_diag(&[1.0, -0.5]);
        let floor = spd_floor(&raw);
        let (p, ev) = project_spd(&raw, None).unwrap();
        assert_eq!(ev, ProjectionEvent::Hard);
        assert!((p.as_mat() - &Mat::from_diag(&[1.0, floor])).max_abs() < 1e-15);
    }

    #[test]
    fn projection_rejects_nan() {
        assert_eq!(
            project_spd(&Mat::from_rows(&[[f64::NAN]]), None).unwrap_err(),
            Error::NonFinite
        );
    }

    #[test]
    fn singular_noise_is_an_error() {
        #[derive(Debug)]
        struct Silent;
        impl ModelCoefficients for Silent {
            fn name(&self) -> &str {
                "silent"
            }
            fn dims(&self) -> crate::models::Dims {
                crate::models::Dims { n: 1, d: 1, d1: 1, d2: 1 }
            }
            fn f(&self, _: f64, y: &[f64], _: &[f64]) -> Vec<f64> {
                vec![-y[0]]
            }
            fn h(&self, _: f64, y: &[f64], _: &[f64]) -> Vec<f64> {
                y.to_vec()
            }
            fn sigma(&self, _: f64, _: &[f64], _: &[f64]) -> Mat {
                Mat::scalar(1.0)
            }
            fn g(&self, _: f64, _: &[f64], _: &[f64]) -> Mat {
                Mat::scalar(0.0)
            }
            fn ell(&self, _: f64, _: &[f64], _: &[f64]) -> Mat {
                Mat::scalar(0.0)
            }
            fn grad_f(&self, _: f64, _: &[f64], _: &[f64]) -> Mat {
                Mat::scalar(-1.0)
            }
            fn grad_h(&self, _: f64, _: &[f64], _: &[f64]) -> Mat {
                Mat::scalar(1.0)
            }
        }
        assert_eq!(
            gain(&Silent, 0.0, &[0.0], &[0.0], &Mat::scalar(1.0)).unwrap_err(),
            Error::SingularObservationNoise
        );
    }

    #[test]
    fn nearly_singular_noise_is_regularized() {
        let ell = Mat::from_rows(&[[1.0, 0.0], [1.0, 1e-9]]);
        let r = &ell * &ell.transpose();
        let (_, regularized) = noise_inverse(&r).unwrap();
        assert!(regularized);
        let (_, regularized) = noise_inverse(&Mat::identity(2)).unwrap();
        assert!(!regularized);
    }

    #[test]
    fn scaled_error_multivariate() {
        let q = SpdMat::new(Mat::from_diag(&[4.0, 9.0])).unwrap();
        let x = scaled_error(&q, &[2.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }
}
