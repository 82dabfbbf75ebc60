//! Euler–Maruyama simulation of the coupled signal/observation system.
//!
//! Brownian increments are drawn from ChaCha8 streams: the per-path seed picks
//! the key and each noise channel (W¹, W², initial-error draws) gets its own
//! stream id, so the channels are independent by construction. Per-path seeds
//! are derived from a master seed with [`split_seed`].

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::{write_header, write_row};
use crate::models::{InitialCondition, ModelCoefficients};

/// Simulation settings for one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub epsilon: f64,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Zero every Brownian increment (deterministic limit).
    #[serde(default)]
    pub zero_noise: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt) || !self.t_end.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "t_end must be >= dt, got t_end = {}, dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(())
    }

    /// Number of Euler steps, `round(t_end / dt)`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Default step size: `1e-3 · min(1, 1 / rate)` for the model's rate scale.
pub fn default_dt(model: &dyn ModelCoefficients) -> f64 {
    let rate = model.rate_scale();
    let factor = if rate > 0.0 { (1.0 / rate).min(1.0) } else { 1.0 };
    1e-3 * factor
}

/// Independent RNG streams drawn from a single path seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum NoiseChannel {
    /// W¹, the signal-only Brownian motion.
    Signal = 1,
    /// W², shared by signal and observation.
    Observation = 2,
    /// Draws for random initial estimation errors.
    InitialError = 3,
}

/// SplitMix64 finalizer.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of path `index` under `master`:
/// `splitmix64(master ^ splitmix64(index))`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// RNG for one channel of one path.
pub fn channel_rng(seed: u64, channel: NoiseChannel) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel as u64);
    rng
}

/// `steps` i.i.d. increments in ℝ^dim, each entry `Normal(0, dt)`.
pub fn brownian_increments(
    seed: u64,
    channel: NoiseChannel,
    steps: usize,
    dim: usize,
    dt: f64,
) -> Vec<Vec<f64>> {
    let mut rng = channel_rng(seed, channel);
    let sd = dt.sqrt();
    (0..steps)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    x * sd
                })
                .collect()
        })
        .collect()
}

/// One sampled realization on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub epsilon: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub y_path: Vec<Vec<f64>>,
    pub z_path: Vec<Vec<f64>>,
    pub w1_increments: Vec<Vec<f64>>,
    pub w2_increments: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Grid index closest to time `t`.
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.dt).round() as usize).min(self.steps())
    }

    /// CSV with header `t,y_1..y_n,z_1..z_d`, one row per grid point.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        let n = self.y_path[0].len();
        let d = self.z_path[0].len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("y_{i}")));
        header.extend((1..=d).map(|i| format!("z_{i}")));
        write_header(w, &header)?;
        for k in 0..self.times.len() {
            write_row(
                w,
                std::iter::once(self.times[k])
                    .chain(self.y_path[k].iter().copied())
                    .chain(self.z_path[k].iter().copied()),
            )?;
        }
        Ok(())
    }
}

/// Simulates one trajectory with Brownian increments drawn from `cfg.seed`.
pub fn simulate(
    model: &dyn ModelCoefficients,
    ic: &InitialCondition,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let dims = model.dims();
    let steps = cfg.steps();
    let (w1, w2) = if cfg.zero_noise {
        (vec![vec![0.0; dims.d1]; steps], vec![vec![0.0; dims.d2]; steps])
    } else {
        (
            brownian_increments(cfg.seed, NoiseChannel::Signal, steps, dims.d1, cfg.dt),
            brownian_increments(cfg.seed, NoiseChannel::Observation, steps, dims.d2, cfg.dt),
        )
    };
    simulate_driven(model, ic, cfg.epsilon, cfg.dt, w1, w2)
}

/// Euler–Maruyama driven by supplied increments:
/// `Y ← Y + f dt + √ε(σ ΔW¹ + g ΔW²)`, `Z ← Z + h dt + √ε ℓ ΔW²`.
pub fn simulate_driven(
    model: &dyn ModelCoefficients,
    ic: &InitialCondition,
    epsilon: f64,
    dt: f64,
    w1_increments: Vec<Vec<f64>>,
    w2_increments: Vec<Vec<f64>>,
) -> Result<Trajectory> {
    let dims = model.dims();
    if ic.y0.len() != dims.n || ic.z0.len() != dims.d {
        return Err(Error::DimensionMismatch {
            op: "simulate",
            expected: format!("y0 of length {}, z0 of length {}", dims.n, dims.d),
            found: format!("{}, {}", ic.y0.len(), ic.z0.len()),
        });
    }
    if w1_increments.len() != w2_increments.len() {
        return Err(Error::GridMismatch("W¹ and W² increment counts differ".into()));
    }
    if !model.admissible(0.0, &ic.y0, &ic.z0) {
        return Err(Error::Inadmissible { step: 0, t: 0.0 });
    }
    let steps = w1_increments.len();
    let sqrt_eps = epsilon.sqrt();
    let mut times = Vec::with_capacity(steps + 1);
    let mut y_path = Vec::with_capacity(steps + 1);
    let mut z_path = Vec::with_capacity(steps + 1);
    times.push(0.0);
    y_path.push(ic.y0.clone());
    z_path.push(ic.z0.clone());
    let mut y = ic.y0.clone();
    let mut z = ic.z0.clone();
    for k in 0..steps {
        let t = k as f64 * dt;
        let dw1 = &w1_increments[k];
        let dw2 = &w2_increments[k];
        let f = model.f(t, &y, &z);
        let h = model.h(t, &y, &z);
        let s_dw1 = model.sigma(t, &y, &z).mul_vec(dw1);
        let g_dw2 = model.g(t, &y, &z).mul_vec(dw2);
        let l_dw2 = model.ell(t, &y, &z).mul_vec(dw2);
        for i in 0..dims.n {
            y[i] += f[i] * dt + sqrt_eps * (s_dw1[i] + g_dw2[i]);
        }
        for i in 0..dims.d {
            z[i] += h[i] * dt + sqrt_eps * l_dw2[i];
        }
        let t_next = (k + 1) as f64 * dt;
        if !y.iter().chain(&z).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1, t: t_next });
        }
        if !model.admissible(t_next, &y, &z) {
            return Err(Error::Inadmissible { step: k + 1, t: t_next });
        }
        times.push(t_next);
        y_path.push(y.clone());
        z_path.push(z.clone());
    }
    Ok(Trajectory {
        epsilon,
        dt,
        times,
        y_path,
        z_path,
        w1_increments,
        w2_increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{sis_scaled_model, LinearModel, SisParams};

    #[test]
    fn config_validation() {
        let ok = SimConfig { epsilon: 0.1, dt: 0.01, t_end: 1.0, seed: 0, zero_noise: false };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.steps(), 100);
        assert!(SimConfig { epsilon: 0.0, ..ok.clone() }.validate().is_err());
        assert!(SimConfig { dt: -1.0, ..ok.clone() }.validate().is_err());
        assert!(SimConfig { t_end: 0.001, ..ok }.validate().is_err());
    }

    #[test]
    fn uniform_grid() {
        let m = LinearModel::scalar(-1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let ic = InitialCondition { y0: vec![0.0], z0: vec![0.0] };
        let cfg = SimConfig { epsilon: 0.1, dt: 1e-3, t_end: 2.0, seed: 3, zero_noise: false };
        let tr = simulate(&m, &ic, &cfg).unwrap();
        assert_eq!(tr.times.len(), 2001);
        for w in tr.times.windows(2) {
            assert!((w[1] - w[0] - 1e-3).abs() < 1e-12);
        }
        assert_eq!(tr.index_of(1.0), 1000);
    }

    #[test]
    fn same_seed_same_bytes() {
        let (m, ic, eps) = sis_scaled_model(SisParams::default()).unwrap();
        let cfg = SimConfig { epsilon: eps, dt: 1e-3, t_end: 1.0, seed: 42, zero_noise: false };
        let mut a = Vec::new();
        let mut b = Vec::new();
        simulate(&m, &ic, &cfg).unwrap().write_csv(&mut a).unwrap();
        simulate(&m, &ic, &cfg).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let cfg2 = SimConfig { seed: 43, ..cfg };
        let mut c = Vec::new();
        simulate(&m, &ic, &cfg2).unwrap().write_csv(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn inadmissible_start_rejected() {
        let (m, _, eps) = sis_scaled_model(SisParams::default()).unwrap();
        let ic = InitialCondition { y0: vec![-1.0 / eps], z0: vec![0.0] };
        let cfg = SimConfig { epsilon: eps, dt: 1e-3, t_end: 1.0, seed: 1, zero_noise: false };
        assert_eq!(simulate(&m, &ic, &cfg).unwrap_err(), Error::Inadmissible { step: 0, t: 0.0 });
    }

    #[test]
    fn inadmissible_state_reports_step() {
        // explicit Euler overshoots the fast recovery and drives the fraction negative
        let p = SisParams { population: 1.0, rho_minus: 50.0, ..SisParams::default() };
        let (m, ic, eps) = sis_scaled_model(p).unwrap();
        let cfg = SimConfig { epsilon: eps, dt: 5e-2, t_end: 1.0, seed: 1, zero_noise: true };
        match simulate(&m, &ic, &cfg) {
            Err(Error::Inadmissible { step, .. }) => assert!(step > 0),
            other => panic!("expected inadmissible, got {other:?}"),
        }
    }

    #[test]
    fn split_seed_is_injective_on_small_range() {
        let mut seen: Vec<u64> = (0..10_000).map(|i| split_seed(7, i)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 10_000);
    }

    #[test]
    fn default_dt_scales_with_rates() {
        let (m, _, _) = sis_scaled_model(SisParams::default()).unwrap();
        assert_eq!(default_dt(&m), 1e-3);
        let fast = SisParams { beta: 20.0, ..SisParams::default() };
        let (m, _, _) = sis_scaled_model(fast).unwrap();
        assert!(default_dt(&m) < 1e-4);
    }
}
