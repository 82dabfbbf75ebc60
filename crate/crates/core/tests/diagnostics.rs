use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use smallnoise::diagnostics::{
    almost_linearity_modulus, check_kk_stable, exp_stability_fit, filter_stability,
    injectivity_constant, moment_norm, moment_norm_of_norms, order_fit, order_fit_ci,
    trace_monitor, BoxSampler, DomainBox, MomentEstimate,
};
use smallnoise::ekf::filter_run;
use smallnoise::matkit::{solve_lyapunov, Mat, SpdMat};
use smallnoise::models::{sis_scaled_model, InitialCondition, LinearModel, ModelCoefficients, SisParams};
use smallnoise::sde::{simulate, SimConfig};
use smallnoise::Error;

#[test]
fn sis_modulus_is_bounded_by_the_quadratic_term() {
    for population in [1e4, 1e6] {
        let p = SisParams { population, ..SisParams::default() };
        let (m, _, eps) = sis_scaled_model(p.clone()).unwrap();
        let radius = 5.0;
        let sampler = BoxSampler::new(DomainBox::around(&[0.0], radius).unwrap(), 3);
        let f_lin = m.grad_f(0.0, &[0.0], &[0.0]);
        let mu = almost_linearity_modulus(|y| m.f(0.0, y, &[0.0]), &f_lin, &sampler, 10_000).unwrap();
        let bound = 2.0 * p.beta * eps * eps * radius;
        assert!(mu <= bound * (1.0 + 1e-9), "mu {mu:e} > {bound:e}");
        assert!(mu >= 0.5 * bound, "mu {mu:e} far below {bound:e}");
    }
}

#[test]
fn linear_observation_injectivity_is_the_smallest_singular_value() {
    let a = Mat::from_rows(&[[2.0, 0.0], [0.0, 0.5]]);
    let sampler = BoxSampler::new(DomainBox::around(&[0.0, 0.0], 1.0).unwrap(), 4);
    let c = injectivity_constant(|y| a.mul_vec(y), &sampler, 10_000).unwrap();
    assert!(c >= 0.5 - 1e-12);
    assert!(c < 0.51, "c {c}");
}

#[test]
fn too_few_pairs_are_rejected() {
    let sampler = BoxSampler::new(DomainBox::around(&[0.0], 1.0).unwrap(), 0);
    let err = injectivity_constant(|y| y.to_vec(), &sampler, 10).unwrap_err();
    assert!(matches!(err, Error::InsufficientSamples(_)));
}

#[test]
fn lyapunov_solution_certifies_kk_stability() {
    let a = Mat::from_rows(&[[-2.0, 1.0], [0.0, -3.0]]);
    let k_rate = 1.0;
    let shifted = &a + &Mat::identity(2).scale(k_rate / 2.0);
    let k = solve_lyapunov(&shifted, &Mat::identity(2).scale(-1.0)).unwrap();
    let n = 5;
    let ok = check_kk_stable(
        &vec![a.clone(); n],
        &vec![k.clone(); n],
        &vec![Mat::zeros(2, 2); n],
        &vec![k_rate; n],
        1e-10,
    )
    .unwrap();
    assert!(ok.iter().all(|b| *b));
    // K̇ = −2I removes the margin.
    let bad = check_kk_stable(&[a], &[k], &[Mat::identity(2).scale(-2.0)], &[k_rate], 1e-10).unwrap();
    assert!(!bad[0]);
}

#[test]
fn identity_weight_with_zero_rate() {
    let id = Mat::identity(2);
    let stable = check_kk_stable(&[id.scale(-1.0)], std::slice::from_ref(&id), &[Mat::zeros(2, 2)], &[0.0], 0.0).unwrap();
    let unstable = check_kk_stable(std::slice::from_ref(&id), std::slice::from_ref(&id), &[Mat::zeros(2, 2)], &[0.0], 0.0).unwrap();
    assert_eq!((stable[0], unstable[0]), (true, false));
    let mismatch = check_kk_stable(std::slice::from_ref(&id), &[], &[], &[], 0.0);
    assert!(matches!(mismatch, Err(Error::GridMismatch(_))));
}

#[test]
fn constant_drift_gives_its_euler_rate() {
    let dt = 1e-3;
    let path = vec![Mat::scalar(-2.0); 2001];
    let w = exp_stability_fit(&path, dt).unwrap();
    let euler_rate = -(1.0f64 - 2.0 * dt).ln() / dt;
    assert!((w.c_hat - euler_rate).abs() < 1e-9);
    assert!(w.residual < 1e-9);
    let up = vec![Mat::scalar(1.0); 2001];
    assert!(exp_stability_fit(&up, dt).unwrap().c_hat < 0.0);
}

#[test]
fn filter_linearization_of_benchmark_is_stable_and_traces_bounded() {
    let m = LinearModel::scalar(-1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
    let ic = InitialCondition { y0: vec![0.0], z0: vec![0.0] };
    let cfg = SimConfig { epsilon: 1e-2, dt: 1e-3, t_end: 5.0, seed: 2, zero_noise: false };
    let traj = simulate(&m, &ic, &cfg).unwrap();
    let run = filter_run(&m, &traj, &[0.0], &SpdMat::identity(1)).unwrap();
    let rep = filter_stability(&m, &traj, &run, &[-1.0, 1.0], 0.1).unwrap();
    assert!(rep.stable);
    assert_eq!(rep.offsets.len(), 3);
    // A = −1 − Q, and Q stays in [√2 − 1, 1].
    let c = rep.c_hat_min.unwrap();
    assert!(c > 1.3 && c < 2.1, "c_hat {c}");
    let tm = trace_monitor(&run).unwrap();
    assert!(tm.bounded);
    assert!(tm.p_min > 0.4 && tm.p_max <= 1.0 + 1e-12);
    assert!((tm.product_max - 1.0).abs() < 1e-12);
}

#[test]
fn gaussian_moment_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let samples: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let abs: Vec<f64> = samples.iter().map(|x: &f64| x.abs()).collect();
    let m2 = moment_norm_of_norms(&abs, 2.0).unwrap();
    let m4 = moment_norm_of_norms(&abs, 4.0).unwrap();
    assert!((m2.value - 1.0).abs() < 0.01, "q=2: {}", m2.value);
    assert!((m4.value - 3f64.powf(0.25)).abs() < 0.02, "q=4: {}", m4.value);
    assert!(m2.std_error > 0.0 && m2.std_error < 0.01);
    let vecs: Vec<Vec<f64>> = samples.iter().map(|x| vec![*x]).collect();
    assert!((moment_norm(&vecs, 2.0).unwrap().value - m2.value).abs() < 1e-12);
}

#[test]
fn exact_power_law_is_recovered() {
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let norms: Vec<f64> = eps.iter().map(|e: &f64| 3.0 * e.powf(0.5)).collect();
    let fit = order_fit(&eps, &norms).unwrap();
    assert!((fit.alpha_hat - 0.5).abs() < 1e-12);
    assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
    assert!((fit.r2 - 1.0).abs() < 1e-12);
    let est: Vec<MomentEstimate> = norms
        .iter()
        .map(|v| MomentEstimate { q_order: 2.0, value: *v, std_error: 0.0, n_samples: 10 })
        .collect();
    let (_, ci) = order_fit_ci(&eps, &est, 0.95).unwrap();
    assert!((ci[0] - 0.5).abs() < 1e-12 && (ci[1] - 0.5).abs() < 1e-12);
    assert!(matches!(order_fit(&eps, &[1.0, 0.0, 1.0, 1.0]), Err(Error::DegenerateFit(_))));
    assert!(order_fit(&eps[..2], &norms[..2]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn moment_norm_is_monotone_in_the_order(
        xs in prop::collection::vec(0.0..10.0f64, 2..200),
        q1 in 1.0..4.0f64,
        dq in 0.0..4.0f64,
    ) {
        prop_assume!(xs.iter().any(|x| *x > 0.0));
        let lo = moment_norm_of_norms(&xs, q1).unwrap().value;
        let hi = moment_norm_of_norms(&xs, q1 + dq).unwrap().value;
        prop_assert!(hi >= lo * (1.0 - 1e-12));
    }

    #[test]
    fn moment_norm_is_homogeneous(xs in prop::collection::vec(0.0..10.0f64, 2..100), c in 0.1..10.0f64) {
        let scaled: Vec<f64> = xs.iter().map(|x| c * x).collect();
        let a = moment_norm_of_norms(&xs, 2.0).unwrap().value;
        let b = moment_norm_of_norms(&scaled, 2.0).unwrap().value;
        prop_assert!((b - c * a).abs() <= 1e-12 * (1.0 + b));
    }

    #[test]
    fn modulus_grows_with_the_box(r in 0.5..5.0f64) {
        let (m, _, _) = sis_scaled_model(SisParams::default()).unwrap();
        let f_lin = m.grad_f(0.0, &[0.0], &[0.0]);
        let mu = |radius: f64| {
            let s = BoxSampler::new(DomainBox::around(&[0.0], radius).unwrap(), 1);
            almost_linearity_modulus(|y| m.f(0.0, y, &[0.0]), &f_lin, &s, 1000).unwrap()
        };
        // Same seed: the larger box holds the scaled copy of every pair.
        prop_assert!(mu(2.0 * r) >= mu(r) * (1.0 - 1e-9));
    }
}
