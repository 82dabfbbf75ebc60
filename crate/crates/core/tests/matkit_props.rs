use nalgebra::DMatrix;
use proptest::prelude::*;

use smallnoise::matkit::{
    cholesky, is_psd, loewner_geq, pinv, singular_values, solve, solve_lyapunov, sqrt_spd,
    sym_eigen, Mat,
};

fn to_na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn max_diff(a: &Mat, b: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    worst
}

fn mat(max_r: usize, max_c: usize) -> impl Strategy<Value = Mat> {
    (1..=max_r, 1..=max_c).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0..5.0f64, r * c).prop_map(move |d| Mat::new(r, c, d).unwrap())
    })
}

fn spd(max_n: usize) -> impl Strategy<Value = Mat> {
    mat(max_n, max_n).prop_map(|b| {
        let n = b.cols();
        (&(&b.transpose() * &b) + &Mat::identity(n).scale(0.5)).symmetrize()
    })
}

fn sym(max_n: usize) -> impl Strategy<Value = Mat> {
    mat(max_n, max_n).prop_flat_map(|b| {
        let n = b.rows();
        prop::collection::vec(-5.0..5.0f64, n * n)
            .prop_map(move |d| Mat::new(n, n, d).unwrap().symmetrize())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn product_matches_nalgebra(a in mat(5, 5), seed in prop::collection::vec(-5.0..5.0f64, 25)) {
        let b = Mat::new(a.cols(), 5, seed[..a.cols() * 5].to_vec()).unwrap();
        let oracle = to_na(&a) * to_na(&b);
        prop_assert!(max_diff(&(&a * &b), &oracle) < 1e-12);
    }

    #[test]
    fn cholesky_solve_matches_nalgebra(a in spd(6)) {
        let n = a.rows();
        let rhs = Mat::new(n, 1, (0..n).map(|i| i as f64 - 1.5).collect()).unwrap();
        let x = cholesky(&a).unwrap().solve_mat(&rhs);
        let oracle = to_na(&a).cholesky().unwrap().solve(&to_na(&rhs));
        prop_assert!(max_diff(&x, &oracle) < 1e-9 * (1.0 + oracle.amax()));
        let ch = cholesky(&a).unwrap();
        let l = ch.factor();
        prop_assert!((&(l * &l.transpose()) - &a).max_abs() < 1e-10 * a.max_abs());
    }

    #[test]
    fn general_solve_residual(a in spd(5)) {
        let n = a.rows();
        let rhs = Mat::identity(n);
        let x = solve(&a, &rhs).unwrap();
        prop_assert!((&(&a * &x) - &rhs).max_abs() < 1e-9);
    }

    #[test]
    fn eigenvalues_match_nalgebra(a in sym(6)) {
        let ours = sym_eigen(&a).unwrap();
        let mut theirs: Vec<f64> = to_na(&a).symmetric_eigenvalues().iter().copied().collect();
        theirs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let scale = 1.0 + a.max_abs();
        for (x, y) in ours.values.iter().zip(&theirs) {
            prop_assert!((x - y).abs() < 1e-10 * scale);
        }
        let back = ours.reconstruct_with(|l| l);
        prop_assert!((&back - &a).max_abs() < 1e-10 * scale);
    }

    #[test]
    fn singular_values_match_nalgebra(a in mat(6, 6)) {
        let ours = singular_values(&a);
        let mut theirs: Vec<f64> = to_na(&a).singular_values().iter().copied().collect();
        theirs.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (x, y) in ours.iter().zip(&theirs) {
            prop_assert!((x - y).abs() < 1e-10 * (1.0 + theirs[0]));
        }
    }

    #[test]
    fn pinv_matches_nalgebra_on_full_rank(a in mat(6, 4)) {
        let sv = singular_values(&a);
        prop_assume!(sv[sv.len() - 1] > 1e-3 * sv[0]);
        let oracle = to_na(&a).pseudo_inverse(1e-12).unwrap();
        let ours = pinv(&a);
        prop_assert!(max_diff(&ours, &oracle) < 1e-8 * (1.0 + oracle.amax()));
    }

    #[test]
    fn sqrt_spd_squares_back(a in spd(5)) {
        let r = sqrt_spd(&a).unwrap();
        prop_assert!(r.is_symmetric(1e-12));
        prop_assert!(is_psd(&r).unwrap());
        prop_assert!((&(&r * &r) - &a).max_abs() < 1e-9 * (1.0 + a.max_abs()));
    }

    #[test]
    fn lyapunov_residual_vanishes(b in spd(4)) {
        let n = b.rows();
        let a = b.scale(-1.0);
        let c = Mat::identity(n).scale(-1.0);
        let x = solve_lyapunov(&a, &c).unwrap();
        let res = &(&(&a * &x) + &(&x * &a.transpose())) - &c;
        prop_assert!(res.max_abs() < 1e-9);
        prop_assert!(is_psd(&x).unwrap());
    }

    #[test]
    fn loewner_order_is_reflexive_and_respects_psd_shifts(a in sym(5), b in spd(5)) {
        prop_assume!(a.rows() == b.rows());
        let tol = 1e-10 * (1.0 + a.max_abs() + b.max_abs());
        prop_assert!(loewner_geq(&a, &a, tol).unwrap());
        prop_assert!(loewner_geq(&(&a + &b), &a, tol).unwrap());
        prop_assert!(!loewner_geq(&a, &(&a + &b), tol).unwrap());
    }
}

#[test]
fn non_square_cholesky_is_rejected() {
    assert!(cholesky(&Mat::zeros(2, 3)).is_err());
}

#[test]
fn indefinite_matrix_is_not_psd() {
    let a = Mat::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
    assert!(!is_psd(&a).unwrap());
    assert!(cholesky(&a).is_err());
}
