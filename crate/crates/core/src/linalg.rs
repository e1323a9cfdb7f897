//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition-number ceiling applied to every symmetric inversion in the crate.
pub const MAX_CONDITION: f64 = 1e12;

/// Spectral condition number of a symmetric matrix, `inf` when it is not positive definite.
pub fn condition_number_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverts a symmetric positive-definite matrix through a Cholesky factorization,
/// refusing anything whose condition number exceeds [`MAX_CONDITION`].
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let condition = condition_number_sym(m);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular {
            what: what.to_string(),
            condition,
        });
    }
    let chol = m.clone().cholesky().ok_or_else(|| Error::Singular {
        what: what.to_string(),
        condition,
    })?;
    let mut inv = chol.inverse();
    // Cholesky inverse is symmetric up to rounding; make it exact.
    symmetrize_in_place(&mut inv);
    Ok(inv)
}

/// `(m + m') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize_in_place(&mut out);
    out
}

fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `a' M b`.
pub fn quad_form(a: &DVector<f64>, m: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    a.dot(&(m * b))
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Moore-Penrose pseudo-inverse via SVD.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    m.clone()
        .pseudo_inverse(scale * 1e-12 * m.nrows().max(m.ncols()) as f64)
        .map_err(|msg| Error::InvalidParameter(format!("pseudo-inverse failed: {msg}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_inverse_roundtrip() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let inv = spd_inverse(&m, "test").unwrap();
        let id = &m * &inv;
        assert!(max_abs(&(id - DMatrix::identity(3, 3))) < 1e-14);
        assert_eq!(inv, inv.transpose());
    }

    #[test]
    fn spd_inverse_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = spd_inverse(&m, "gram").unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
        assert!(err.to_string().contains("gram"));
    }

    #[test]
    fn condition_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 10.0, 100.0]));
        assert!((condition_number_sym(&m) - 100.0).abs() < 1e-10);
    }
}
