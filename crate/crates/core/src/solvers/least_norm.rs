use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::Result;
use crate::linalg::pinv_solve;
use crate::tensor::fourier::TubeFft;
use crate::tensor::{DenseTensor3, Shape3, SpectralTensor3};

use super::kernel::check_system_shapes;

/// Singular values at or below this fraction of the largest are discarded.
pub const LEAST_NORM_RCOND: f64 = 1e-10;

/// Minimum-norm least-squares solution of `A ∗ X = B`, one pseudoinverse per
/// Fourier slice. Column slices of `X` depend only on the matching column
/// slices of `B`.
pub fn least_norm_solve(a: &DenseTensor3, b: &DenseTensor3) -> Result<DenseTensor3> {
    let (m, l, n, p) = (a.rows(), a.cols(), a.depth(), b.cols());
    check_system_shapes(a.shape(), Shape3::new(l, p, n), b.shape())?;
    let fft = TubeFft::new(n);
    let ah = fft.forward(a);
    let bh = fft.forward(b);
    let slices: Vec<DMatrix<Complex64>> = (0..n / 2 + 1)
        .into_par_iter()
        .map(|h| {
            let am = ah.slice_matrix(h);
            let bm = DMatrix::from_row_slice(m, p, bh.slice(h));
            pinv_solve(&am, &bm, LEAST_NORM_RCOND)
        })
        .collect::<Result<_>>()?;
    let mut xh = SpectralTensor3::zeros(Shape3::new(l, p, n));
    for (h, sol) in slices.iter().enumerate() {
        let dst = xh.slice_mut(h);
        for r in 0..l {
            for c in 0..p {
                dst[r * p + c] = sol[(r, c)];
            }
        }
    }
    // The DC (and Nyquist) slices of a real system must stay real.
    for h in [0, n / 2].into_iter().filter(|&h| h == 0 || 2 * h == n) {
        for v in xh.slice_mut(h) {
            v.im = 0.0;
        }
    }
    xh.mirror_conjugates();
    fft.inverse(&xh)
}
