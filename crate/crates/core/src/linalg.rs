//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative tolerance used when validating symmetry of user-supplied matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalues above `-PSD_TOL · max(1, ‖A‖)` are accepted as nonnegative and clipped at 0.
pub const PSD_TOL: f64 = 1e-10;

pub fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

pub fn is_square(a: &DMatrix<f64>) -> bool {
    a.nrows() == a.ncols()
}

/// Symmetric to `tol` relative to the largest absolute entry.
pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    if !is_square(a) {
        return false;
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().symmetric_eigen().eigenvalues.min()
}

/// Checks that `a` is symmetric and positive semidefinite (up to [`PSD_TOL`]).
pub fn validate_psd(a: &DMatrix<f64>, name: &str) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} has non-finite entries")));
    }
    if !is_symmetric(a, SYMMETRY_TOL) {
        return Err(Error::InvalidParameter(format!("{name} is not symmetric")));
    }
    let floor = -PSD_TOL * a.amax().max(1.0);
    if min_eigenvalue(a) < floor {
        return Err(Error::InvalidParameter(format!(
            "{name} is not positive semidefinite"
        )));
    }
    Ok(())
}

/// Symmetrizes and clips eigenvalues in `[-PSD_TOL·scale, 0)` to zero.
///
/// Matrices that are already positive definite are only symmetrized.
pub fn project_psd(p: &DMatrix<f64>) -> DMatrix<f64> {
    let p = symmetrize(p);
    if p.is_empty() || p.clone().cholesky().is_some() {
        return p;
    }
    let eig = p.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= 0.0 {
        return p;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&clipped) * v.transpose()))
}

pub fn cholesky(a: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    a.clone().cholesky().ok_or(Error::Singular(what))
}

/// `log det(A)` from a Cholesky factor.
pub fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `xᵀ A⁻¹ x` using a Cholesky factor of `A`.
pub fn chol_quad_form(chol: &Cholesky<f64, Dyn>, x: &DVector<f64>) -> f64 {
    let l = chol.l_dirty();
    let z = l
        .solve_lower_triangular(x)
        .expect("cholesky factor has a positive diagonal");
    z.norm_squared()
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(a, what)?.inverse()))
}

/// A matrix `L` with `L Lᵀ = A` for a symmetric PSD `A`.
///
/// Lower-triangular Cholesky when `A` is positive definite; otherwise the
/// symmetric eigendecomposition with negative eigenvalues clipped at zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = a.clone().cholesky() {
        return chol.unpack();
    }
    let eig = symmetrize(a).symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// `A · B⁻¹` for symmetric positive definite `B`, computed as `(B⁻¹ Aᵀ)ᵀ`.
pub fn right_divide_spd(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let chol = cholesky(b, what)?;
    Ok(chol.solve(&a.transpose()).transpose())
}

pub fn check_square(a: &DMatrix<f64>, n: usize, name: &str) -> Result<()> {
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Dimension(format!(
            "{name} is {}x{}, expected {n}x{n}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

pub fn check_len(v: &DVector<f64>, n: usize, name: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!(
            "{name} has length {}, expected {n}",
            v.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_sqrt_reproduces_singular_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_sqrt(&a);
        assert!((&l * l.transpose() - &a).amax() < 1e-12);
    }

    #[test]
    fn project_psd_clips_tiny_negative_eigenvalue() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-13]);
        let p = project_psd(&a);
        assert!(min_eigenvalue(&p) >= -1e-15);
        assert!((&p - &a).amax() < 1e-12);
    }

    #[test]
    fn validate_rejects_asymmetric_and_indefinite() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(validate_psd(&asym, "A").is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(validate_psd(&indef, "A").is_err());
        assert!(validate_psd(&DMatrix::identity(3, 3), "A").is_ok());
    }

    #[test]
    fn quad_form_matches_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let x = DVector::from_vec(vec![1.0, -3.0]);
        let chol = cholesky(&a, "A").unwrap();
        let direct = (x.transpose() * a.clone().try_inverse().unwrap() * &x)[(0, 0)];
        assert!((chol_quad_form(&chol, &x) - direct).abs() < 1e-12);
        assert!((chol_log_det(&chol) - 3f64.ln()).abs() < 1e-12);
    }
}
