//! Dense complex kernels used per Fourier slice, backed by nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Singular values of a dense complex matrix, in descending order.
pub fn singular_values(m: &DMatrix<Complex64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Eigenvalues of a Hermitian matrix, ascending. Only the lower triangle is read.
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Minimum-norm least-squares solution `pinv(A) B`, discarding singular values
/// at or below `rel_tol * σ_max`.
pub fn pinv_solve(
    a: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    rel_tol: f64,
) -> Result<DMatrix<Complex64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::shape(format!(
            "pinv solve of {}x{} against {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(DMatrix::zeros(a.ncols(), b.ncols()));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(DMatrix::zeros(a.ncols(), b.ncols()));
    }
    svd.solve(b, rel_tol * smax)
        .map_err(|e| Error::Numerical(format!("pseudoinverse solve: {e}")))
}
