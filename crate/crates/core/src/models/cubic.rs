use super::{Dims, ModelCoefficients};
use crate::matkit::Mat;

/// Scalar model whose observation drift `h(y) = y³` is not strongly
/// injective near the origin: `f = −y`, `σ = 1`, `g = 0`, `ℓ = 1`.
///
/// Serves as a planted counterexample for the assumption checks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CubicObservationModel;

impl ModelCoefficients for CubicObservationModel {
    fn name(&self) -> &str {
        "cubic"
    }

    fn dims(&self) -> Dims {
        Dims { n: 1, d: 1, d1: 1, d2: 1 }
    }

    fn f(&self, _t: f64, y: &[f64], _z: &[f64]) -> Vec<f64> {
        vec![-y[0]]
    }

    fn h(&self, _t: f64, y: &[f64], _z: &[f64]) -> Vec<f64> {
        vec![y[0].powi(3)]
    }

    fn sigma(&self, _t: f64, _y: &[f64], _z: &[f64]) -> Mat {
        Mat::scalar(1.0)
    }

    fn g(&self, _t: f64, _y: &[f64], _z: &[f64]) -> Mat {
        Mat::scalar(0.0)
    }

    fn ell(&self, _t: f64, _y: &[f64], _z: &[f64]) -> Mat {
        Mat::scalar(1.0)
    }

    fn grad_f(&self, _t: f64, _y: &[f64], _z: &[f64]) -> Mat {
        Mat::scalar(-1.0)
    }

    fn grad_h(&self, _t: f64, y: &[f64], _z: &[f64]) -> Mat {
        Mat::scalar(3.0 * y[0] * y[0])
    }
}
