use serde::Serialize;

use super::{Dims, ModelCoefficients};
use crate::error::{Error, Result};
use crate::matkit::{cholesky, Mat};

/// Linear model with constant diffusions:
/// `f = A y`, `h = H y`, `σ = S`, `g = G`, `ℓ = L`.
///
/// On this class the extended Kalman filter is the exact Kalman–Bucy filter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearModel {
    pub a: Mat,
    pub h_mat: Mat,
    pub s: Mat,
    pub g_mat: Mat,
    pub l_mat: Mat,
    #[serde(skip)]
    dims: Dims,
}

impl LinearModel {
    /// Validates shapes and requires `L Lᵀ` to be invertible.
    pub fn new(a: Mat, h_mat: Mat, s: Mat, g_mat: Mat, l_mat: Mat) -> Result<Self> {
        let n = a.rows();
        let d = h_mat.rows();
        let d1 = s.cols();
        let d2 = g_mat.cols();
        let check = |m: &Mat, r: usize, c: usize, what: &'static str| -> Result<()> {
            if m.shape() != (r, c) {
                return Err(Error::DimensionMismatch {
                    op: what,
                    expected: format!("{r}x{c}"),
                    found: format!("{}x{}", m.rows(), m.cols()),
                });
            }
            Ok(())
        };
        check(&a, n, n, "linear model drift")?;
        check(&h_mat, d, n, "linear model observation matrix")?;
        check(&s, n, d1, "linear model signal diffusion")?;
        check(&g_mat, n, d2, "linear model correlated diffusion")?;
        check(&l_mat, d, d2, "linear model observation diffusion")?;
        for m in [&a, &h_mat, &s, &g_mat, &l_mat] {
            if !m.all_finite() {
                return Err(Error::NonFinite);
            }
        }
        let r = &l_mat * &l_mat.transpose();
        if cholesky(&r).is_err() {
            return Err(Error::SingularObservationNoise);
        }
        Ok(Self {
            a,
            h_mat,
            s,
            g_mat,
            l_mat,
            dims: Dims { n, d, d1, d2 },
        })
    }

    /// Scalar benchmark `dY = a Y dt + √ε(s dW¹ + g dW²)`, `dZ = h Y dt + √ε l dW²`.
    pub fn scalar(a: f64, h: f64, s: f64, g: f64, l: f64) -> Result<Self> {
        Self::new(
            Mat::scalar(a),
            Mat::scalar(h),
            Mat::scalar(s),
            Mat::scalar(g),
            Mat::scalar(l),
        )
    }
}

/// Builds a [`LinearModel`]; errors when `l_mat l_matᵀ` is singular.
pub fn linear_model(a: Mat, h_mat: Mat, s: Mat, g_mat: Mat, l_mat: Mat) -> Result<LinearModel> {
    LinearModel::new(a, h_mat, s, g_mat, l_mat)
}

impl ModelCoefficients for LinearModel {
    fn name(&self) -> &str {
        "linear"
    }

    fn dims(&self) -> Dims {
        self.dims
    }

    fn f(&self, _t: f64, y: &[f64], _z: &[f64]) -> Vec<f64> {
        self.a.mul_vec(y)
    }

    fn h(&self, _t: f64, y: &[f64], _z: &[f64]) -> Vec<f64> {
        self.h_mat.mul_vec(y)
    }

    fn sigma(&self, _t: f64, _y: &[f64], _z: &[f64]) -> Mat {
        self.s.clone()
    }

    fn g(&self, _t: f64, _y: &[f64], _z: &[f64]) -> Mat {
        self.g_mat.clone()
    }

    fn ell(&self, _t: f64, _y: &[f64], _z: &[f64]) -> Mat {
        self.l_mat.clone()
    }

    fn grad_f(&self, _t: f64, _y: &[f64], _z: &[f64]) -> Mat {
        self.a.clone()
    }

    fn grad_h(&self, _t: f64, _y: &[f64], _z: &[f64]) -> Mat {
        self.h_mat.clone()
    }

    fn rate_scale(&self) -> f64 {
        self.a.frobenius_norm()
    }

    fn as_linear(&self) -> Option<&LinearModel> {
        Some(self)
    }

    fn admissible(&self, _t: f64, y: &[f64], z: &[f64]) -> bool {
        y.len() == self.dims.n
            && z.len() == self.dims.d
            && y.iter().chain(z).all(|v| v.is_finite())
    }
}
