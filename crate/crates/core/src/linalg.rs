//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff for pseudoinverse solves.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-12;

/// Solves `m y = rhs` for symmetric `m` through its eigendecomposition,
/// zeroing eigenvalue reciprocals below `rel_cutoff * max|eigenvalue|`
/// (Moore-Penrose on the numerically nonzero spectrum).
pub fn pinv_solve_sym(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    rel_cutoff: f64,
) -> Result<DVector<f64>> {
    if m.iter().any(|v| !v.is_finite()) || rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "pseudoinverse input contains non-finite values".to_string(),
        ));
    }
    if m.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let eig = m.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let cutoff = rel_cutoff * max_abs;
    let mut coeffs = eig.eigenvectors.transpose() * rhs;
    for (i, c) in coeffs.iter_mut().enumerate() {
        let ev = eig.eigenvalues[i];
        *c = if ev.abs() > cutoff { *c / ev } else { 0.0 };
    }
    let out = eig.eigenvectors * coeffs;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "pseudoinverse solve produced non-finite values".to_string(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_nonsingular_symmetric_system() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let rhs = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let y = pinv_solve_sym(&m, &rhs, PINV_RELATIVE_CUTOFF).unwrap();
        assert_relative_eq!(&m * &y, rhs, epsilon = 1e-12);
    }

    #[test]
    fn drops_null_directions_of_singular_systems() {
        // Rank-1 matrix vv^T with v = (1, 1): the minimum-norm solution of
        // vv^T y = 2v is y = (1, 1).
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let rhs = DVector::from_vec(vec![2.0, 2.0]);
        let y = pinv_solve_sym(&m, &rhs, PINV_RELATIVE_CUTOFF).unwrap();
        assert_relative_eq!(y[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(y[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_finite_input() {
        let m = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        let rhs = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            pinv_solve_sym(&m, &rhs, PINV_RELATIVE_CUTOFF),
            Err(Error::NumericalFailure(_))
        ));
    }
}
