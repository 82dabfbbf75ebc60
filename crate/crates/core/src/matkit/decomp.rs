use super::Mat;
use crate::error::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 100;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Mat,
}

/// Cholesky factorization of a symmetric positive definite matrix. Only the
/// lower triangle of `a` is read.
pub fn cholesky(a: &Mat) -> Result<Cholesky> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            op: "cholesky",
            expected: "square matrix".into(),
            found: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(Cholesky { l })
}

impl Cholesky {
    pub fn factor(&self) -> &Mat {
        &self.l
    }

    /// Solves `A X = B`.
    pub fn solve_mat(&self, b: &Mat) -> Mat {
        let n = self.l.rows();
        assert_eq!(b.rows(), n, "cholesky solve dimension mismatch");
        let mut x = b.clone();
        for c in 0..b.cols() {
            // forward: L y = b
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
            // backward: Lᵀ x = y
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= self.l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
        }
        x
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        self.solve_mat(&Mat::column(b)).into_vec()
    }

    /// Symmetric inverse of `A`.
    pub fn inverse(&self) -> Mat {
        self.solve_mat(&Mat::identity(self.l.rows())).symmetrize()
    }
}

/// Solves the square system `A X = B` by LU with partial pivoting.
pub fn solve(a: &Mat, b: &Mat) -> Result<Mat> {
    if !a.is_square() || a.rows() != b.rows() {
        return Err(Error::DimensionMismatch {
            op: "solve",
            expected: format!("square A with {} rows in B", a.rows()),
            found: format!("A {}x{}, B {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        });
    }
    let n = a.rows();
    let m = b.cols();
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let (piv, pval) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pval <= 1e-14 * scale {
            return Err(Error::InvalidParameter("singular system in solve".into()));
        }
        if piv != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(piv, j)];
                lu[(piv, j)] = tmp;
            }
            for j in 0..m {
                let tmp = x[(k, j)];
                x[(k, j)] = x[(piv, j)];
                x[(piv, j)] = tmp;
            }
        }
        for i in (k + 1)..n {
            let factor = lu[(i, k)] / lu[(k, k)];
            if factor == 0.0 {
                continue;
            }
            for j in k..n {
                lu[(i, j)] -= factor * lu[(k, j)];
            }
            for j in 0..m {
                x[(i, j)] -= factor * x[(k, j)];
            }
        }
    }
    for c in 0..m {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= lu[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / lu[(i, i)];
        }
    }
    Ok(x)
}

/// Eigen-decomposition of a symmetric matrix: `A = V diag(values) Vᵀ`,
/// eigenvalues ascending, eigenvectors in the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl SymEigen {
    /// `V diag(map(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, map: impl Fn(f64) -> f64) -> Mat {
        let n = self.values.len();
        let mut out = Mat::zeros(n, n);
        for (k, &lam) in self.values.iter().enumerate() {
            let w = map(lam);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = self.vectors[(i, k)] * w;
                for j in 0..n {
                    out[(i, j)] += vik * self.vectors[(j, k)];
                }
            }
        }
        out.symmetrize()
    }
}

/// Symmetric eigensolver (cyclic Jacobi). Rejects non-symmetric input.
pub fn sym_eigen(a: &Mat) -> Result<SymEigen> {
    a.ensure_symmetric()?;
    Ok(jacobi_eigen(&a.symmetrize()))
}

pub(crate) fn jacobi_eigen(a: &Mat) -> SymEigen {
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    let scale = a.frobenius_norm();
    if n > 1 && scale > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)] * m[(i, j)])
                .sum();
            if off.sqrt() <= f64::EPSILON * 1e-2 * scale {
                break;
            }
            for p in 0..n - 1 {
                for q in (p + 1)..n {
                    let apq = m[(p, q)];
                    if apq.abs() <= f64::MIN_POSITIVE {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new)] = v[(k, old)];
        }
    }
    SymEigen { values, vectors }
}

pub fn min_eig(a: &Mat) -> Result<f64> {
    Ok(sym_eigen(a)?.values[0])
}

pub fn max_eig(a: &Mat) -> Result<f64> {
    Ok(*sym_eigen(a)?.values.last().expect("non-empty spectrum"))
}

/// Thin SVD `A = U diag(s) Vᵀ`; `U` is m×k, `V` is n×k with k = min(m, n).
/// Singular values are sorted descending.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

/// One-sided Jacobi SVD.
pub fn svd(a: &Mat) -> Svd {
    if a.rows() < a.cols() {
        let t = svd(&a.transpose());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let (m, n) = a.shape();
    let mut u = a.clone();
    let mut v = Mat::identity(n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    alpha += u[(i, p)] * u[(i, p)];
                    beta += u[(i, q)] * u[(i, q)];
                    gamma += u[(i, p)] * u[(i, q)];
                }
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let up = u[(i, p)];
                    let uq = u[(i, q)];
                    u[(i, p)] = c * up - s * uq;
                    u[(i, q)] = s * up + c * uq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<(f64, usize)> = (0..n)
        .map(|j| ((0..m).map(|i| u[(i, j)] * u[(i, j)]).sum::<f64>().sqrt(), j))
        .collect();
    sv.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut uo = Mat::zeros(m, n);
    let mut vo = Mat::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (new, &(sigma, old)) in sv.iter().enumerate() {
        s.push(sigma);
        for i in 0..m {
            uo[(i, new)] = if sigma > 0.0 { u[(i, old)] / sigma } else { 0.0 };
        }
        for i in 0..n {
            vo[(i, new)] = v[(i, old)];
        }
    }
    Svd { u: uo, s, v: vo }
}

pub fn singular_values(a: &Mat) -> Vec<f64> {
    svd(a).s
}

/// Moore–Penrose pseudoinverse via the SVD. Singular values below
/// `max(m, n) · ε_mach · σ_max` are treated as zero.
pub fn pinv(a: &Mat) -> Mat {
    let Svd { u, s, v } = svd(a);
    let smax = s.first().copied().unwrap_or(0.0);
    let cutoff = a.rows().max(a.cols()) as f64 * f64::EPSILON * smax;
    let mut out = Mat::zeros(a.cols(), a.rows());
    for (k, &sigma) in s.iter().enumerate() {
        if sigma <= cutoff || sigma == 0.0 {
            continue;
        }
        let inv = 1.0 / sigma;
        for i in 0..a.cols() {
            let vik = v[(i, k)] * inv;
            for j in 0..a.rows() {
                out[(i, j)] += vik * u[(j, k)];
            }
        }
    }
    out
}

/// Principal square root of a symmetric positive definite matrix.
pub fn sqrt_spd(q: &Mat) -> Result<Mat> {
    q.ensure_symmetric()?;
    let q = q.symmetrize();
    cholesky(&q)?;
    let eig = jacobi_eigen(&q);
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// Solves `A X + X Aᵀ = C` through the Kronecker form
/// `(I ⊗ A + A ⊗ I) vec(X) = vec(C)`.
pub fn solve_lyapunov(a: &Mat, c: &Mat) -> Result<Mat> {
    if !a.is_square() || a.shape() != c.shape() {
        return Err(Error::DimensionMismatch {
            op: "solve_lyapunov",
            expected: format!("square A and C of shape {}x{}", a.rows(), a.rows()),
            found: format!("A {}x{}, C {}x{}", a.rows(), a.cols(), c.rows(), c.cols()),
        });
    }
    let n = a.rows();
    let nn = n * n;
    // Row-major vec: index (i, j) -> i * n + j.
    // (A X)_{ij} = Σ_k A_ik X_kj ; (X Aᵀ)_{ij} = Σ_k X_ik A_jk.
    let mut big = Mat::zeros(nn, nn);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in 0..n {
                big[(row, k * n + j)] += a[(i, k)];
                big[(row, i * n + k)] += a[(j, k)];
            }
        }
    }
    let rhs = Mat::column(c.as_slice());
    let x = solve(&big, &rhs)?;
    Ok(Mat::from_vec_unchecked(n, n, x.into_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
        a.shape() == b.shape() && (a - b).max_abs() <= tol
    }

    #[test]
    fn pinv_identity_and_idempotent_diagonal() {
        assert!(close(&pinv(&Mat::identity(3)), &Mat::identity(3), 1e-15));
        let d = Mat::from_diag(&[1.0, 0.0]);
        assert!(close(&pinv(&d), &d, 1e-15));
    }

    #[test]
    fn pinv_of_wide_and_tall_shapes() {
        let a = Mat::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let b = pinv(&a);
        assert_eq!(b.shape(), (3, 2));
        assert!(close(&(&(&a * &b) * &a), &a, 1e-12));
        let bt = pinv(&a.transpose());
        assert!(close(&bt, &b.transpose(), 1e-12));
    }

    #[test]
    fn sqrt_of_diagonal_and_identity() {
        assert!(close(&sqrt_spd(&Mat::identity(2)).unwrap(), &Mat::identity(2), 1e-15));
        let s = sqrt_spd(&Mat::from_diag(&[4.0, 9.0])).unwrap();
        assert!(close(&s, &Mat::from_diag(&[2.0, 3.0]), 1e-14));
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        assert_eq!(
            sqrt_spd(&Mat::from_diag(&[1.0, -1.0])).unwrap_err(),
            Error::NotPositiveDefinite
        );
    }

    #[test]
    fn extreme_eigenvalues_known_spectra() {
        let d = Mat::from_diag(&[1.0, 5.0]);
        assert!((min_eig(&d).unwrap() - 1.0).abs() < 1e-14);
        assert!((max_eig(&d).unwrap() - 5.0).abs() < 1e-14);
        let x = Mat::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        assert!((min_eig(&x).unwrap() + 1.0).abs() < 1e-14);
        assert!((max_eig(&x).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigen_rejects_non_symmetric() {
        let a = Mat::from_rows(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(min_eig(&a), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn lyapunov_diagonal_case() {
        // A = diag(-1, -2), C = -I  =>  X = diag(1/2, 1/4)
        let a = Mat::from_diag(&[-1.0, -2.0]);
        let x = solve_lyapunov(&a, &Mat::identity(2).scale(-1.0)).unwrap();
        assert!(close(&x, &Mat::from_diag(&[0.5, 0.25]), 1e-14));
    }

    #[test]
    fn lyapunov_non_normal_residual() {
        let a = Mat::from_rows(&[[-1.0, 3.0], [0.0, -2.0]]);
        let c = Mat::from_rows(&[[-1.0, 0.2], [0.2, -3.0]]);
        let x = solve_lyapunov(&a, &c).unwrap();
        let resid = &(&(&a * &x) + &(&x * &a.transpose())) - &c;
        assert!(resid.max_abs() < 1e-12);
    }

    #[test]
    fn solve_matches_known_system() {
        let a = Mat::from_rows(&[[0.0, 2.0], [1.0, 1.0]]);
        let b = Mat::column(&[4.0, 3.0]);
        let x = solve(&a, &b).unwrap();
        assert!(close(&x, &Mat::column(&[1.0, 2.0]), 1e-14));
        assert!(solve(&Mat::zeros(2, 2), &b).is_err());
    }

    #[test]
    fn cholesky_inverse() {
        let a = Mat::from_rows(&[[4.0, 2.0], [2.0, 3.0]]);
        let inv = cholesky(&a).unwrap().inverse();
        assert!(close(&(&a * &inv), &Mat::identity(2), 1e-14));
    }
}
