//! Small dense helpers shared by the Lewis-weight and barrier code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Cholesky factorization with a single bounded diagonal jitter of
/// `1e-12 * trace / dim` when the plain factorization fails.
pub fn cholesky_jitter<T: Real>(m: &DMatrix<T>, what: &str) -> Result<Cholesky<T, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let dim = m.nrows().max(1);
    let shift = T::lit(1e-12) * m.trace() / T::from_usize_lossy(dim);
    let mut jittered = m.clone();
    for i in 0..m.nrows() {
        jittered[(i, i)] += shift;
    }
    let fail = || Error::Numerical(format!("{what} is not positive definite (numerically rank deficient)"));
    let c = Cholesky::new(jittered).ok_or_else(fail)?;
    // A pivot the shift accounts for means the original matrix was singular.
    let l = c.l_dirty();
    let floor = T::lit(100.0) * shift;
    if (0..l.nrows()).any(|i| l[(i, i)] * l[(i, i)] <= floor) {
        return Err(fail());
    }
    Ok(c)
}

pub fn logdet_from_cholesky<T: Real>(c: &Cholesky<T, Dyn>) -> T {
    let l = c.l_dirty();
    let two = T::lit(2.0);
    (0..l.nrows()).fold(T::zero(), |acc, i| acc + two * l[(i, i)].ln())
}

/// Diagonal matrix from a vector.
pub fn diag<T: Real>(v: &DVector<T>) -> DMatrix<T> {
    DMatrix::from_diagonal(v)
}

/// `diag(d) * m`: scales the rows of `m`.
pub fn scale_rows<T: Real>(d: &DVector<T>, m: &DMatrix<T>) -> DMatrix<T> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= d[i];
    }
    out
}

/// `m * diag(d)`: scales the columns of `m`.
pub fn scale_cols<T: Real>(m: &DMatrix<T>, d: &DVector<T>) -> DMatrix<T> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= d[j];
    }
    out
}

/// `mᵀ diag(d) m` for a tall `m`.
pub fn weighted_gram<T: Real>(m: &DMatrix<T>, d: &DVector<T>) -> DMatrix<T> {
    let scaled = scale_rows(d, m);
    m.transpose() * scaled
}

/// Symmetrizes in place: `(m + mᵀ) / 2`.
pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn frobenius<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

pub fn inf_norm<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// Extreme eigenvalues `(min, max)` of the pencil `(b, a)`, i.e. of `L⁻¹ b L⁻ᵀ` with `a = L Lᵀ`.
pub fn generalized_eig_extremes<T: Real>(b: &DMatrix<T>, a_chol: &Cholesky<T, Dyn>) -> (T, T) {
    let l = a_chol.l();
    let left = l
        .solve_lower_triangular(b)
        .expect("cholesky factor is nonsingular");
    let mut whitened = l
        .solve_lower_triangular(&left.transpose())
        .expect("cholesky factor is nonsingular");
    symmetrize(&mut whitened);
    let eig = SymmetricEigen::new(whitened);
    let mut lo = T::max_value().unwrap_or_else(|| T::lit(f64::MAX));
    let mut hi = -lo;
    for &e in eig.eigenvalues.iter() {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_and_indefinite_are_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky_jitter(&m, "test").is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_jitter(&bad, "test").is_err());
        let thin = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-9]);
        assert!(cholesky_jitter(&thin, "test").is_ok());
    }

    #[test]
    fn generalized_extremes_of_scaled_identity() {
        let a = DMatrix::<f64>::identity(3, 3) * 2.0;
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, -2.0]));
        let c = Cholesky::new(a).unwrap();
        let (lo, hi) = generalized_eig_extremes(&b, &c);
        assert!((lo + 1.0).abs() < 1e-14);
        assert!((hi - 2.0).abs() < 1e-14);
    }

    #[test]
    fn logdet_matches_product_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let c = Cholesky::new(m).unwrap();
        assert!((logdet_from_cholesky(&c) - 11f64.ln()).abs() < 1e-14);
    }
}
