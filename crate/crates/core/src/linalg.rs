//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Everything works on dynamically sized `nalgebra` matrices. Dimensions in
//! this crate are desk scale (n ≤ 10, joint systems a few hundred rows), so
//! the routines favour clarity over blocking or in-place tricks.

use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &Matrix) -> f64 {
    (m - m.transpose()).amax()
}

pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b))
}

/// Eigen-decomposition of the symmetric part of `m`.
pub fn sym_eigen(m: &Matrix) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    sym_eigen(m).eigenvalues.min()
}

/// Symmetric PSD square root, eigenvalues clamped at zero.
pub fn sqrt_psd(m: &Matrix) -> Matrix {
    let eig = sym_eigen(m);
    let d = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    &eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Symmetric inverse square root of a positive definite matrix.
pub fn inv_sqrt_pd(m: &Matrix) -> Result<Matrix> {
    let eig = sym_eigen(m);
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&l| l <= 1e-14 * scale) {
        return Err(Error::SingularCovariance);
    }
    let d = eig.eigenvalues.map(|l| 1.0 / libm::sqrt(l));
    Ok(&eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

pub fn inverse(m: &Matrix) -> Result<Matrix> {
    m.clone().try_inverse().ok_or(Error::SingularCovariance)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn inverse_pd(m: &Matrix) -> Result<Matrix> {
    Cholesky::new(symmetrize(m))
        .map(|c| c.inverse())
        .ok_or(Error::SingularCovariance)
}

/// `log det` of a symmetric positive definite matrix.
pub fn logdet_pd(m: &Matrix) -> Result<f64> {
    let chol = Cholesky::new(symmetrize(m)).ok_or(Error::SingularCovariance)?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        if d <= 0.0 {
            return Err(Error::SingularCovariance);
        }
        acc += libm::log(d);
    }
    Ok(2.0 * acc)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max)
}

/// Numerical rank with threshold `rtol · σ_max`.
pub fn rank(m: &Matrix, rtol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * smax).count()
}

/// `M⁰ … M^k` for `k = 0..count`.
pub fn powers(m: &Matrix, count: usize) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(count);
    let mut acc = Matrix::identity(m.nrows(), m.ncols());
    for _ in 0..count {
        out.push(acc.clone());
        acc = m * &acc;
    }
    out
}

/// Sum in a fixed pairwise order so results do not depend on how the
/// inputs were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        pairwise_sum(xs) / xs.len() as f64
    }
}

/// Build a matrix from row slices. Panics on ragged input; used for
/// literals in fixtures and tests.
pub fn from_rows(rows: &[&[f64]]) -> Matrix {
    let r = rows.len();
    let c = if r == 0 { 0 } else { rows[0].len() };
    Matrix::from_fn(r, c, |i, j| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_roundtrip() {
        let m = from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let s = sqrt_psd(&m);
        assert_relative_eq!(&s * &s, m, epsilon = 1e-12);
        let is = inv_sqrt_pd(&m).unwrap();
        assert_relative_eq!(&is * &m * &is, Matrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn logdet_matches_product_of_eigenvalues() {
        let m = from_rows(&[&[2.0, 0.5], &[0.5, 1.0]]);
        assert_relative_eq!(logdet_pd(&m).unwrap(), libm::log(2.0 - 0.25), epsilon = 1e-14);
        assert!(logdet_pd(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let m = from_rows(&[&[0.0, -0.5], &[0.5, 0.0]]);
        assert_relative_eq!(spectral_radius(&m), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn rank_drops_on_dependent_columns() {
        let m = from_rows(&[&[1.0, 2.0], &[2.0, 4.0], &[0.0, 0.0]]);
        assert_eq!(rank(&m, 1e-9), 1);
    }
}
