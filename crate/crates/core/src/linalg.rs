//! Small dense helpers shared by the solver modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Vector 1-norm.
pub fn norm1(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Induced matrix 1-norm (maximum absolute column sum).
pub fn max_col_sum(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    max_abs(&(m - m.transpose()))
}

pub fn is_skew(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && max_abs(&(m + m.transpose())) <= tol
}

/// 2-norm condition number from the singular values; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smin <= 0.0 || !smin.is_finite() {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Inverse and inverse square root of a symmetric positive-definite matrix.
pub fn spd_inverse_and_inv_sqrt(r: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_spd(r, "R")?;
    let eig = symmetrize(r).symmetric_eigen();
    let v = &eig.eigenvectors;
    let inv = v * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * v.transpose();
    let inv_sqrt =
        v * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * v.transpose();
    Ok((symmetrize(&inv), symmetrize(&inv_sqrt)))
}

pub fn check_spd(r: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if !r.is_square() {
        return Err(Error::dims(what, "square", format!("{}x{}", r.nrows(), r.ncols())));
    }
    if asymmetry(r) > 1e-12 * (1.0 + max_abs(r)) {
        return Err(Error::InvalidInput {
            what,
            reason: "matrix is not symmetric".into(),
        });
    }
    if r.clone().cholesky().is_none() {
        return Err(Error::InvalidInput {
            what,
            reason: "matrix is not positive definite".into(),
        });
    }
    Ok(())
}

pub fn check_psd(q: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if !q.is_square() {
        return Err(Error::dims(what, "square", format!("{}x{}", q.nrows(), q.ncols())));
    }
    let scale = max_abs(q);
    if asymmetry(q) > 1e-12 * (1.0 + scale) {
        return Err(Error::InvalidInput {
            what,
            reason: "matrix is not symmetric".into(),
        });
    }
    if q.nrows() > 0 && min_sym_eigenvalue(q) < -1e-10 * scale {
        return Err(Error::InvalidInput {
            what,
            reason: "matrix is not positive semidefinite".into(),
        });
    }
    Ok(())
}

pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_sum_norm() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -4.0, -2.0, 1.0]);
        assert_eq!(max_col_sum(&m), 5.0);
        assert_eq!(norm1(&DVector::from_vec(vec![1.0, -2.0])), 3.0);
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (inv, s) = spd_inverse_and_inv_sqrt(&r).unwrap();
        assert!(max_abs(&(&s * &s - &inv)) < 1e-14);
        assert!(max_abs(&(&inv * &r - DMatrix::identity(2, 2))) < 1e-14);
    }

    #[test]
    fn rejects_indefinite_weights() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(check_spd(&r, "R").is_err());
        assert!(check_psd(&r, "Q").is_err());
        assert!(check_psd(&DMatrix::zeros(2, 2), "Q").is_ok());
    }
}
