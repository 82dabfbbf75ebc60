//! Fixtures shared by the criterion benches.

use smallnoise::{simulate, sis_scaled_model, InitialCondition, SimConfig, SisModel, SisParams, Trajectory};

/// Default SI±S model with one simulated trajectory of `steps` Euler steps.
pub fn sis_fixture(steps: usize) -> (SisModel, InitialCondition, Trajectory) {
    let (model, ic, eps) = sis_scaled_model(SisParams::default()).expect("default parameters are valid");
    let dt = 1e-2;
    let cfg = SimConfig { epsilon: eps, dt, t_end: steps as f64 * dt, seed: 7, zero_noise: false };
    let traj = simulate(&model, &ic, &cfg).expect("default SI±S path stays admissible");
    (model, ic, traj)
}
