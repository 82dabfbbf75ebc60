use serde::{Deserialize, Serialize};

use super::{Dims, InitialCondition, ModelCoefficients};
use crate::error::{Error, Result};
use crate::matkit::Mat;

/// Square-root arguments in `[-SQRT_DUST, 0)` are treated as zero.
const SQRT_DUST: f64 = 1e-12;

/// Parameters of the SI±S epidemic model (susceptible, undetected infected,
/// detected infected) with constant population size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SisParams {
    /// Infection intensity β.
    pub beta: f64,
    /// Detection (testing) rate α.
    pub alpha: f64,
    /// Recovery rate of undetected infected ρ⁻.
    pub rho_minus: f64,
    /// Recovery rate of detected infected ρ⁺.
    pub rho_plus: f64,
    /// Population size N.
    pub population: f64,
    /// Initial fractions (Ī⁻(0), Ī⁺(0)).
    pub x0: [f64; 2],
}

impl Default for SisParams {
    fn default() -> Self {
        Self {
            beta: 0.5,
            alpha: 0.2,
            rho_minus: 0.1,
            rho_plus: 0.15,
            population: 1e4,
            x0: [0.1, 0.05],
        }
    }
}

impl SisParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("rho_minus", self.rho_minus),
            ("rho_plus", self.rho_plus),
        ];
        for (name, v) in rates {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.population >= 1.0) || !self.population.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "population must be >= 1, got {}",
                self.population
            )));
        }
        let [a, b] = self.x0;
        if !(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0 && a + b < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "x0 must lie in (0,1)^2 with sum < 1, got ({a}, {b})"
            )));
        }
        Ok(())
    }

    /// ε = 1/√N.
    pub fn epsilon(&self) -> f64 {
        1.0 / self.population.sqrt()
    }

    /// Same parameters at the population whose noise scale is `epsilon`.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            population: 1.0 / (epsilon * epsilon),
            ..self.clone()
        }
    }

    /// Drift `F̄(y, z)` of the unscaled fractions.
    pub fn unscaled_drift(&self, y: f64, z: f64) -> [f64; 2] {
        [
            self.beta * (1.0 - y - z) * y - (self.alpha + self.rho_minus) * y,
            self.alpha * y - self.rho_plus * z,
        ]
    }

    fn rate_norm(&self) -> f64 {
        [self.beta, self.alpha, self.rho_minus, self.rho_plus]
            .iter()
            .map(|r| r * r)
            .sum::<f64>()
            .sqrt()
    }
}

fn guarded_sqrt(x: f64) -> f64 {
    if x >= 0.0 {
        x.sqrt()
    } else if x >= -SQRT_DUST {
        0.0
    } else {
        f64::NAN
    }
}

/// Time-scaled SI±S filtering system for the deviation
/// `U = ε⁻¹(X(ετ) − x₀) = (Y, Z)`: hidden undetected-infected deviation `Y`,
/// observed detected-infected deviation `Z`. Coefficients are the diffusion
/// approximation's `F̄`, `σ̄` evaluated at `x₀ + εU`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SisModel {
    pub params: SisParams,
    pub epsilon: f64,
}

impl SisModel {
    pub fn new(params: SisParams) -> Result<Self> {
        params.validate()?;
        let epsilon = params.epsilon();
        Ok(Self { params, epsilon })
    }

    /// Compartment fractions `(ŷ, ẑ) = x₀ + ε(y, z)`.
    #[inline]
    pub fn fractions(&self, y: f64, z: f64) -> (f64, f64) {
        (
            self.params.x0[0] + self.epsilon * y,
            self.params.x0[1] + self.epsilon * z,
        )
    }

    /// The almost derivative of `f` in `y`: the coefficient of the linear
    /// term, `ε[β(1 − 2x₀₁ − (x₀₂ + εz)) − (α + ρ⁻)]`.
    pub fn almost_derivative_f(&self, z: f64) -> f64 {
        let p = &self.params;
        let zhat = p.x0[1] + self.epsilon * z;
        self.epsilon * (p.beta * (1.0 - 2.0 * p.x0[0] - zhat) - (p.alpha + p.rho_minus))
    }
}

/// Builds the time-scaled SI±S system, its initial condition `U(0) = 0`, and ε.
pub fn sis_scaled_model(p: SisParams) -> Result<(SisModel, InitialCondition, f64)> {
    let model = SisModel::new(p)?;
    let ic = InitialCondition {
        y0: vec![0.0],
        z0: vec![0.0],
    };
    if !model.admissible(0.0, &ic.y0, &ic.z0) {
        return Err(Error::InvalidParameter(
            "SI±S coefficients undefined at the initial state".into(),
        ));
    }
    let eps = model.epsilon;
    Ok((model, ic, eps))
}

impl ModelCoefficients for SisModel {
    fn name(&self) -> &str {
        "sis"
    }

    fn dims(&self) -> Dims {
        Dims { n: 1, d: 1, d1: 2, d2: 2 }
    }

    fn f(&self, _t: f64, y: &[f64], z: &[f64]) -> Vec<f64> {
        let (yh, zh) = self.fractions(y[0], z[0]);
        vec![self.params.unscaled_drift(yh, zh)[0]]
    }

    fn h(&self, _t: f64, y: &[f64], z: &[f64]) -> Vec<f64> {
        let (yh, zh) = self.fractions(y[0], z[0]);
        vec![self.params.unscaled_drift(yh, zh)[1]]
    }

    fn sigma(&self, _t: f64, y: &[f64], z: &[f64]) -> Mat {
        let p = &self.params;
        let (yh, zh) = self.fractions(y[0], z[0]);
        Mat::row(&[
            guarded_sqrt(p.beta * (1.0 - yh - zh) * yh),
            -guarded_sqrt(p.rho_minus * yh),
        ])
    }

    fn g(&self, _t: f64, y: &[f64], z: &[f64]) -> Mat {
        let (yh, _) = self.fractions(y[0], z[0]);
        Mat::row(&[-guarded_sqrt(self.params.alpha * yh), 0.0])
    }

    fn ell(&self, _t: f64, y: &[f64], z: &[f64]) -> Mat {
        let p = &self.params;
        let (yh, zh) = self.fractions(y[0], z[0]);
        Mat::row(&[guarded_sqrt(p.alpha * yh), -guarded_sqrt(p.rho_plus * zh)])
    }

    fn grad_f(&self, _t: f64, y: &[f64], z: &[f64]) -> Mat {
        let p = &self.params;
        let (yh, zh) = self.fractions(y[0], z[0]);
        Mat::scalar(self.epsilon * (p.beta * (1.0 - 2.0 * yh - zh) - (p.alpha + p.rho_minus)))
    }

    fn grad_h(&self, _t: f64, _y: &[f64], _z: &[f64]) -> Mat {
        Mat::scalar(self.epsilon * self.params.alpha)
    }

    fn rate_scale(&self) -> f64 {
        self.params.rate_norm()
    }

    fn intrinsic_epsilon(&self) -> Option<f64> {
        Some(self.epsilon)
    }

    fn admissible(&self, _t: f64, y: &[f64], z: &[f64]) -> bool {
        if y.len() != 1 || z.len() != 1 || !y[0].is_finite() || !z[0].is_finite() {
            return false;
        }
        let p = &self.params;
        let (yh, zh) = self.fractions(y[0], z[0]);
        let args = [
            p.beta * (1.0 - yh - zh) * yh,
            p.rho_minus * yh,
            p.alpha * yh,
            p.rho_plus * zh,
        ];
        args.iter().all(|&a| a >= -SQRT_DUST) && p.alpha * yh + p.rho_plus * zh > 0.0
    }
}
