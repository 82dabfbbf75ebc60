use super::decomp::{cholesky, jacobi_eigen};
use super::Mat;
use crate::error::{Error, Result};

const TRACE_RTOL: f64 = 1e-10;

/// Absolute tolerance for "positive semi-definite within tol":
/// `1e-10 · max(1, ‖A‖_F)`.
pub fn psd_tolerance(a: &Mat) -> f64 {
    1e-10 * a.frobenius_norm().max(1.0)
}

/// True iff the symmetric matrix `a` has smallest eigenvalue ≥ −[`psd_tolerance`].
pub fn is_psd(a: &Mat) -> Result<bool> {
    a.ensure_symmetric()?;
    let lam = jacobi_eigen(&a.symmetrize()).values[0];
    Ok(lam >= -psd_tolerance(a))
}

/// Loewner comparison `A ⪰ B`: true iff λ_min(A − B) ≥ −tol.
pub fn loewner_geq(a: &Mat, b: &Mat, tol: f64) -> Result<bool> {
    a.same_shape(b, "loewner_geq")?;
    a.ensure_symmetric()?;
    b.ensure_symmetric()?;
    let diff = (&a.symmetrize() - &b.symmetrize()).symmetrize();
    Ok(jacobi_eigen(&diff).values[0] >= -tol)
}

fn geq_rel(lhs: f64, rhs: f64) -> bool {
    lhs >= rhs - TRACE_RTOL * lhs.abs().max(rhs.abs()).max(1.0)
}

fn require_psd(a: &Mat) -> Result<()> {
    a.ensure_symmetric()?;
    let lam = jacobi_eigen(&a.symmetrize()).values[0];
    if lam < -psd_tolerance(a) {
        return Err(Error::NotPositiveSemiDefinite { min_eig: lam });
    }
    Ok(())
}

/// Checks `tr²(A) ≥ tr(A²) ≥ tr²(A)/d` for a PSD matrix, to 1e-10 relative.
pub fn trace_bounds_check(a: &Mat) -> Result<bool> {
    require_psd(a)?;
    let d = a.rows() as f64;
    let tr = a.trace();
    let tr_sq = (a * a).trace();
    Ok(geq_rel(tr * tr, tr_sq) && geq_rel(tr_sq, tr * tr / d))
}

/// Checks the product-trace bounds for PSD `A`, `B`:
/// `λ_min(A) tr(B) ≤ tr(AB) ≤ λ_max(A) tr(B)`, `tr(AB) ≤ tr(A) tr(B)`, and,
/// when `A` is positive definite, `tr(B) / tr(A⁻¹) ≤ tr(AB)`.
pub fn trace_product_bounds_check(a: &Mat, b: &Mat) -> Result<bool> {
    a.same_shape(b, "trace_product_bounds_check")?;
    require_psd(a)?;
    require_psd(b)?;
    let eig = jacobi_eigen(&a.symmetrize());
    let (lmin, lmax) = (eig.values[0], *eig.values.last().unwrap());
    let tr_ab = (a * b).trace();
    let tr_b = b.trace();
    let mut ok = geq_rel(tr_ab, lmin * tr_b)
        && geq_rel(lmax * tr_b, tr_ab)
        && geq_rel(a.trace() * tr_b, tr_ab);
    if let Ok(ch) = cholesky(a) {
        let tr_inv = ch.inverse().trace();
        ok &= geq_rel(tr_ab, tr_b / tr_inv);
    }
    Ok(ok)
}
