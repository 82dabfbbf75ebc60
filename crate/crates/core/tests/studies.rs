use smallnoise::studies::{
    run_convergence_study, run_forgetting_study, ConvergenceStudySpec, ForgettingStudySpec,
    LinearSpec, ModelSpec, StudyStatus,
};
use smallnoise::Error;

fn benchmark_spec(dt: f64) -> ConvergenceStudySpec {
    ConvergenceStudySpec {
        model: ModelSpec::Linear(LinearSpec::benchmark()),
        eps_grid: vec![1e-1, 1e-2, 1e-3],
        n_paths: 200,
        q_orders: vec![2.0],
        t_checkpoints: vec![1.0],
        dt: Some(dt),
        master_seed: 3,
        q0: None,
        zero_noise: false,
    }
}

#[test]
fn rate_does_not_depend_on_the_step_size() {
    let coarse = run_convergence_study(&benchmark_spec(2e-3)).unwrap();
    let fine = run_convergence_study(&benchmark_spec(1e-3)).unwrap();
    let (a, b) = (coarse.fits[0].alpha_hat.unwrap(), fine.fits[0].alpha_hat.unwrap());
    assert!((a - b).abs() < 0.02, "alpha {a} vs {b}");
    assert!((a - 0.5).abs() < 0.05);
}

#[test]
fn error_norm_shrinks_with_epsilon() {
    let rep = run_convergence_study(&benchmark_spec(2e-3)).unwrap();
    assert_eq!(rep.status, StudyStatus::Valid);
    let values: Vec<f64> = rep.groups.iter().map(|g| g.estimates[0].estimate.value).collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
    assert_eq!(rep.per_path.len(), 3 * 200);
    assert_eq!(rep.oracle.len(), 3);
    assert!(rep.oracle.iter().all(|o| o.mean_rms < 1e-2));
}

#[test]
fn spec_round_trips_through_json() {
    let spec = benchmark_spec(1e-3);
    let text = serde_json::to_string(&spec).unwrap();
    let back: ConvergenceStudySpec = serde_json::from_str(&text).unwrap();
    assert_eq!(spec, back);
    let with_extra = text.replacen('{', "{\"bogus\":1,", 1);
    assert!(serde_json::from_str::<ConvergenceStudySpec>(&with_extra).is_err());
}

#[test]
fn off_grid_checkpoints_are_rejected() {
    let mut spec = benchmark_spec(1e-2);
    spec.t_checkpoints = vec![0.1234];
    assert!(matches!(run_convergence_study(&spec), Err(Error::GridMismatch(_))));
}

#[test]
fn bad_grids_are_rejected() {
    let mut spec = benchmark_spec(1e-2);
    spec.eps_grid = vec![1e-2, 1e-1, 1e-3];
    assert!(matches!(run_convergence_study(&spec), Err(Error::InvalidParameter(_))));
    let mut spec = benchmark_spec(1e-2);
    spec.n_paths = 5;
    assert!(spec.validate().is_err());
}

#[test]
fn forgetting_transient_shrinks_with_time() {
    let spec = ForgettingStudySpec {
        model: ModelSpec::Linear(LinearSpec::scalar(-1.0, 1.0, 1.0, 0.0, 1.0)),
        epsilon: 1e-4,
        initial_error_magnitudes: vec![1.0],
        n_paths: 50,
        t_grid: (0..=12).map(|k| k as f64 * 0.25).collect(),
        q_order: 2.0,
        master_seed: 1,
        dt: Some(1e-3),
        q0: None,
        direction: None,
        fit_threshold: 10.0,
        stability_margin: 0.1,
        stability_offsets: vec![-1.0, 1.0],
    };
    let rep = run_forgetting_study(&spec).unwrap();
    let group = rep.groups.iter().find(|g| g.parameter == 1.0).unwrap();
    let v: Vec<f64> = group.estimates.iter().map(|e| e.estimate.value).collect();
    assert!(v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
    assert!(rep.pilot_stability.as_ref().unwrap().stable);
}

#[test]
fn uncorrelated_oracle_update_equals_joseph_form() {
    use smallnoise::matkit::{Mat, SpdMat};
    use smallnoise::models::{InitialCondition, LinearModel};
    use smallnoise::sde::{simulate, SimConfig};
    use smallnoise::studies::{discrete_kalman_oracle, observation_increments};

    let (a, h, s, l) = (
        Mat::from_rows(&[[-1.0, 0.4], [0.1, -0.7]]),
        Mat::from_rows(&[[1.0, -0.5]]),
        Mat::from_rows(&[[1.0, 0.0], [0.3, 0.8]]),
        Mat::scalar(0.9),
    );
    let m = LinearModel::new(a.clone(), h.clone(), s.clone(), Mat::zeros(2, 1), l.clone()).unwrap();
    let (eps, dt) = (1e-2, 1e-2);
    let ic = InitialCondition { y0: vec![0.2, -0.1], z0: vec![0.0] };
    let traj = simulate(&m, &ic, &SimConfig { epsilon: eps, dt, t_end: 0.5, seed: 4, zero_noise: false }).unwrap();
    let dz = observation_increments(&traj.z_path);
    let q0 = SpdMat::new(Mat::from_rows(&[[2.0, 0.3], [0.3, 0.5]])).unwrap();
    let run = discrete_kalman_oracle(&m, &dz, &[0.0, 0.0], &q0, eps, dt).unwrap();

    let f = &Mat::identity(2) + &a.scale(dt);
    let hd = h.scale(dt);
    let w = (&s * &s.transpose()).scale(eps * dt);
    let r = (&l * &l.transpose()).scale(eps * dt);
    for k in 0..run.states.len() - 1 {
        let p = run.states[k].q.as_mat().scale(eps);
        let innov = &(&(&hd * &p) * &hd.transpose()) + &r;
        let gain = (&(&f * &p) * &hd.transpose()).scale(1.0 / innov[(0, 0)]);
        let closed = &f - &(&gain * &hd);
        let joseph = &(&(&(&closed * &p) * &closed.transpose()) + &w) + &(&(&gain * &r) * &gain.transpose());
        let next = run.states[k + 1].q.as_mat().scale(eps);
        assert!((&joseph - &next).max_abs() < 1e-12, "step {k}");
    }
}
