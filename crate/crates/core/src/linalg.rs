//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Result};

/// Cached Cholesky factor `A = L Lᵀ` of a symmetric positive definite matrix.
///
/// Weighted norms and solves go through triangular solves; the inverse is
/// never formed.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(name: &str, a: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dim(format!(
                "{name} is {}x{}, expected square",
                a.nrows(),
                a.ncols()
            )));
        }
        if let Some((row, col)) = first_non_finite(a) {
            return Err(Error::NonFinite { row, col });
        }
        let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
        if !is_symmetric(a, 1e-10 * scale) {
            return Err(Error::invalid(format!("{name} is not symmetric")));
        }
        match Cholesky::new(symmetrize(a)) {
            Some(chol) if chol.l_dirty().diagonal().iter().all(|d| *d > 0.0) => Ok(Self { chol }),
            _ => Err(Error::NotPositiveDefinite {
                name: name.to_string(),
                min_eigenvalue: min_eigenvalue(a),
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// `L⁻¹ v`, the whitened vector.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let mut out = v.clone();
        l.solve_lower_triangular_mut(&mut out);
        out
    }

    /// `L⁻¹ M` column by column.
    pub fn whiten_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.chol.l_dirty();
        let mut out = m.clone();
        l.solve_lower_triangular_mut(&mut out);
        out
    }

    /// `A⁻¹ v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    pub fn solve_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(m)
    }

    /// `vᵀ A⁻¹ v`.
    pub fn mahalanobis_sq(&self, v: &DVector<f64>) -> f64 {
        self.whiten(v).norm_squared()
    }
}

pub fn first_non_finite(a: &DMatrix<f64>) -> Option<(usize, usize)> {
    for c in 0..a.ncols() {
        for r in 0..a.nrows() {
            if !a[(r, c)].is_finite() {
                return Some((r, c));
            }
        }
    }
    None
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let n = a.nrows();
    (0..n).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(a)).eigenvalues.min()
}

/// Thin SVD `A = U diag(s) Vᵀ` with `min(m, n)` columns in `U`.
///
/// The tall orientation is reduced by a QR factorization first, and the
/// square triangular factor is decomposed. nalgebra's bidiagonal SVD can
/// return orthonormal factors that do not reproduce a rank-deficient input;
/// the preconditioned path and a residual check guard against that.
pub fn thin_svd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    if a.nrows() < a.ncols() {
        let (u, s, v_t) = thin_svd(&a.transpose())?;
        return Ok((v_t.transpose(), s, u.transpose()));
    }
    let qr = a.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let tol = 1e-10 * a.amax().max(f64::MIN_POSITIVE) * (a.nrows() as f64).sqrt();
    for transposed in [false, true] {
        let svd = if transposed { r.transpose() } else { r.clone() }.svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            continue;
        };
        let (u, v_t) = if transposed { (v_t.transpose(), u.transpose()) } else { (u, v_t) };
        let s = svd.singular_values;
        if (&u * DMatrix::from_diagonal(&s) * &v_t - &r).amax() <= tol {
            return Ok((&q * u, s, v_t));
        }
    }
    Err(Error::Numerical("SVD failed to reproduce its input".into()))
}

pub fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thin_svd_reproduces_rank_deficient_input() {
        let a = DMatrix::from_fn(26, 4, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let mut c = a.clone();
        let last = c.column(0) - c.column(1) + c.column(2) * 0.5;
        c.set_column(3, &last);
        for m in [c.clone(), c.transpose()] {
            let (u, s, v_t) = thin_svd(&m).unwrap();
            assert!((&u * DMatrix::from_diagonal(&s) * &v_t - &m).amax() < 1e-12);
            let e = s.len();
            assert!((u.transpose() * &u - DMatrix::<f64>::identity(e, e)).amax() < 1e-12);
        }
    }

    #[test]
    fn whitened_norm_matches_explicit_inverse() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = SpdFactor::new("A", &a).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let direct = (v.transpose() * a.clone().try_inverse().unwrap() * &v)[(0, 0)];
        assert!((f.mahalanobis_sq(&v) - direct).abs() < 1e-12);
        assert!((f.solve(&v) - a.try_inverse().unwrap() * &v).norm() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_with_eigenvalue() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match SpdFactor::new("R", &a) {
            Err(Error::NotPositiveDefinite { min_eigenvalue, .. }) => {
                assert!((min_eigenvalue + 1.0).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(SpdFactor::new("B", &a).is_err());
    }
}
