//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const SYMMETRY_TOL: f64 = 1e-9;

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn ensure_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn ensure_symmetric(m: &DMatrix<f64>) -> Result<()> {
    ensure_square(m)?;
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix. The input is symmetrized first so
/// roundoff-level asymmetry does not leak into the eigenvectors.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    sym_eigen(m).eigenvalues.min()
}

/// Rebuilds `V diag(f(λ)) Vᵀ` from a symmetric eigendecomposition.
pub fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = sym_eigen(m);
    let mapped = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    let scaled = v * DMatrix::from_diagonal(&mapped);
    let out = scaled * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Symmetric square root of a PSD matrix; negative eigenvalues are clipped.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| l.max(0.0).sqrt())
}

pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_of_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        let r = sqrt_psd(&m);
        assert!((r[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((r[(1, 1)] - 3.0).abs() < 1e-12);
        assert!(r[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(ensure_symmetric(&m), Err(Error::NotSymmetric(_))));
        let r = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(ensure_square(&r), Err(Error::DimensionMismatch(_))));
    }
}
