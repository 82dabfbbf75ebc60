//! Small dense matrices and the symmetric / positive-definite utilities the
//! filter and its diagnostics are built on.
//!
//! Everything here is sized for state dimensions of about ten or less: storage
//! is a flat row-major `Vec<f64>`, and the algorithms are the direct ones
//! (Cholesky, cyclic Jacobi for symmetric eigenproblems, one-sided Jacobi for
//! the SVD).

mod decomp;
mod order;

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use decomp::{
    cholesky, max_eig, min_eig, Cholesky, pinv, singular_values, solve, solve_lyapunov, sqrt_spd,
    sym_eigen, svd, Svd, SymEigen,
};
pub(crate) use decomp::jacobi_eigen;
pub use order::{is_psd, loewner_geq, psd_tolerance, trace_bounds_check, trace_product_bounds_check};

/// Relative tolerance used when deciding whether a matrix is symmetric.
pub const SYMMETRY_RTOL: f64 = 1e-12;

/// Dense real matrix, row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// Builds a matrix from row-major entries, rejecting bad shapes and
    /// non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "Mat::new",
                expected: format!("{} entries", rows * cols),
                found: format!("{} entries", data.len()),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::from_vec_unchecked(r, c, data)
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec_unchecked(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn scalar(x: f64) -> Self {
        Self::from_vec_unchecked(1, 1, vec![x])
    }

    /// Column vector.
    pub fn column(v: &[f64]) -> Self {
        Self::from_vec_unchecked(v.len(), 1, v.to_vec())
    }

    /// Row vector.
    pub fn row(v: &[f64]) -> Self {
        Self::from_vec_unchecked(1, v.len(), v.to_vec())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat::from_vec_unchecked(self.rows, self.cols, self.data.iter().map(|x| x * s).collect())
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// Largest |A_ij - A_ji|; infinite for non-square input.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, rtol: f64) -> bool {
        self.asymmetry() <= rtol * self.frobenius_norm().max(1.0)
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrize(&self) -> Mat {
        assert!(self.is_square(), "symmetrize needs a square matrix");
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    pub(crate) fn ensure_symmetric(&self) -> Result<()> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch {
                op: "symmetric check",
                expected: "square matrix".into(),
                found: format!("{}x{}", self.rows, self.cols),
            });
        }
        if !self.all_finite() {
            return Err(Error::NonFinite);
        }
        let asym = self.asymmetry();
        if asym > SYMMETRY_RTOL * self.frobenius_norm().max(1.0) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(())
    }

    pub(crate) fn same_shape(&self, other: &Mat, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                expected: format!("{}x{}", self.rows, self.cols),
                found: format!("{}x{}", other.rows, other.cols),
            });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, rhs: &Mat) -> Mat {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }
}

impl Add for &Mat {
    type Output = Mat;
    fn add(self, rhs: &Mat) -> Mat {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        Mat::from_vec_unchecked(
            self.rows,
            self.cols,
            self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        )
    }
}

impl Sub for &Mat {
    type Output = Mat;
    fn sub(self, rhs: &Mat) -> Mat {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        Mat::from_vec_unchecked(
            self.rows,
            self.cols,
            self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        )
    }
}

impl Neg for &Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat{}x{}[", self.rows, self.cols)?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{:.6e}", self[(i, j)])?;
            }
        }
        write!(f, "]")
    }
}

/// Symmetric, strictly positive definite matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SpdMat(Mat);

impl SpdMat {
    /// Validates symmetry (relative tolerance [`SYMMETRY_RTOL`]) and positive
    /// definiteness (Cholesky success). The stored matrix is exactly symmetric.
    pub fn new(m: Mat) -> Result<Self> {
        m.ensure_symmetric()?;
        let m = m.symmetrize();
        cholesky(&m)?;
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: Mat) -> Self {
        Self(m)
    }

    pub fn identity(n: usize) -> Self {
        Self(Mat::identity(n))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }
}

impl AsRef<Mat> for SpdMat {
    fn as_ref(&self) -> &Mat {
        &self.0
    }
}

impl std::ops::Deref for SpdMat {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        &self.0
    }
}

/// Euclidean norm of a vector.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_shape_and_finiteness() {
        assert!(Mat::new(2, 2, vec![1.0, 2.0, 3.0]).is_err());
        assert_eq!(Mat::new(1, 2, vec![1.0, f64::NAN]), Err(Error::NonFinite));
        assert!(Mat::new(0, 2, vec![]).is_err());
        assert!(Mat::new(2, 1, vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn matmul_and_transpose() {
        let a = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let b = Mat::from_rows(&[[1.0, 0.0, -1.0], [2.0, 1.0, 0.0]]);
        let c = &a * &b;
        assert_eq!(c, Mat::from_rows(&[[5.0, 2.0, -1.0], [11.0, 4.0, -3.0], [17.0, 6.0, -5.0]]));
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.mul_vec(&[1.0, 1.0]), vec![3.0, 7.0, 11.0]);
    }

    #[test]
    fn spd_rejects_indefinite_and_asymmetric() {
        assert_eq!(
            SpdMat::new(Mat::from_diag(&[1.0, -1.0])),
            Err(Error::NotPositiveDefinite)
        );
        assert!(matches!(
            SpdMat::new(Mat::from_rows(&[[2.0, 1.0], [0.0, 2.0]])),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(SpdMat::new(Mat::from_rows(&[[2.0, 1.0], [1.0, 2.0]])).is_ok());
    }

    #[test]
    fn symmetrize_averages_off_diagonal() {
        let a = Mat::from_rows(&[[1.0, 2.0], [4.0, 3.0]]);
        assert_eq!(a.symmetrize(), Mat::from_rows(&[[1.0, 3.0], [3.0, 3.0]]));
    }
}
