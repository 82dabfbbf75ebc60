//! Filtering-problem coefficients and the shipped model instances.
//!
//! A model is the quintuple `(f, h, σ, g, ℓ)` together with the signal
//! Jacobians `∇_y f`, `∇_y h`, for the coupled system
//!
//! ```text
//! dY = f(t, Y, Z) dt + √ε σ(t, Y, Z) dW¹ + √ε g(t, Y, Z) dW²
//! dZ = h(t, Y, Z) dt + √ε ℓ(t, Y, Z) dW²
//! ```
//!
//! Coefficients depend on the current observation value only, not on the
//! whole observation history.

mod cubic;
mod linear;
mod sis;

use serde::{Deserialize, Serialize};

use crate::matkit::{cholesky, Mat};

pub use cubic::CubicObservationModel;
pub use linear::{linear_model, LinearModel};
pub use sis::sis_scaled_model;
pub use sis::{SisModel, SisParams};

/// Dimensions of a filtering problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Signal dimension.
    pub n: usize,
    /// Observation dimension.
    pub d: usize,
    /// Dimension of the signal-only Brownian motion W¹.
    pub d1: usize,
    /// Dimension of the shared Brownian motion W².
    pub d2: usize,
}

/// The coefficient quintuple of a filtering problem plus the signal Jacobians.
///
/// Implementations must be pure: the same inputs always give the same outputs.
pub trait ModelCoefficients: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;

    fn dims(&self) -> Dims;

    /// Signal drift, length `n`.
    fn f(&self, t: f64, y: &[f64], z: &[f64]) -> Vec<f64>;

    /// Observation drift, length `d`.
    fn h(&self, t: f64, y: &[f64], z: &[f64]) -> Vec<f64>;

    /// Signal diffusion against W¹, `n × d1`.
    fn sigma(&self, t: f64, y: &[f64], z: &[f64]) -> Mat;

    /// Signal diffusion against W², `n × d2`.
    fn g(&self, t: f64, y: &[f64], z: &[f64]) -> Mat;

    /// Observation diffusion against W², `d × d2`.
    fn ell(&self, t: f64, y: &[f64], z: &[f64]) -> Mat;

    /// `∇_y f`, `n × n`.
    fn grad_f(&self, t: f64, y: &[f64], z: &[f64]) -> Mat;

    /// `∇_y h`, `d × n`.
    fn grad_h(&self, t: f64, y: &[f64], z: &[f64]) -> Mat;

    /// Characteristic rate used for the default step size.
    fn rate_scale(&self) -> f64 {
        1.0
    }

    /// Noise scale ε carried by the model, when it fixes one.
    fn intrinsic_epsilon(&self) -> Option<f64> {
        None
    }

    /// Linear structure, when the model is exactly linear.
    fn as_linear(&self) -> Option<&LinearModel> {
        None
    }

    /// True iff every coefficient is finite at `(t, y, z)` and `ℓℓᵀ ≻ 0`.
    fn admissible(&self, t: f64, y: &[f64], z: &[f64]) -> bool {
        default_admissible(self, t, y, z)
    }
}

pub(crate) fn default_admissible<M: ModelCoefficients + ?Sized>(
    model: &M,
    t: f64,
    y: &[f64],
    z: &[f64],
) -> bool {
    let dims = model.dims();
    if y.len() != dims.n || z.len() != dims.d {
        return false;
    }
    if !y.iter().chain(z).all(|v| v.is_finite()) {
        return false;
    }
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !finite(&model.f(t, y, z)) || !finite(&model.h(t, y, z)) {
        return false;
    }
    let ell = model.ell(t, y, z);
    let mats = [
        model.sigma(t, y, z),
        model.g(t, y, z),
        model.grad_f(t, y, z),
        model.grad_h(t, y, z),
    ];
    if !ell.all_finite() || mats.iter().any(|m| !m.all_finite()) {
        return false;
    }
    let r = &ell * &ell.transpose();
    cholesky(&r).is_ok()
}

/// Free-function form of [`ModelCoefficients::admissible`].
pub fn admissible(model: &dyn ModelCoefficients, y: &[f64], z: &[f64]) -> bool {
    model.admissible(0.0, y, z)
}

/// Starting point `(Y(0), Z(0)) = (y0, z0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub y0: Vec<f64>,
    pub z0: Vec<f64>,
}

/// Central finite-difference Jacobian of `phi` with respect to `y`.
pub fn fd_jacobian(
    phi: impl Fn(&[f64]) -> Vec<f64>,
    y: &[f64],
    step: f64,
) -> Mat {
    let out_dim = phi(y).len();
    let mut jac = Mat::zeros(out_dim, y.len());
    let mut yp = y.to_vec();
    for j in 0..y.len() {
        let h = step * y[j].abs().max(1.0);
        yp[j] = y[j] + h;
        let fp = phi(&yp);
        yp[j] = y[j] - h;
        let fm = phi(&yp);
        yp[j] = y[j];
        for i in 0..out_dim {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}
