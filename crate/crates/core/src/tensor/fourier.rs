//! Tube-wise DFT and the Fourier-domain representation of a tensor.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{DenseTensor3, Shape3};
use crate::error::{Error, Result};

/// Largest imaginary residue tolerated when casting an inverse transform back
/// to a real tensor.
pub const IFFT_IMAG_TOLERANCE: f64 = 1e-10;

/// The DFT of every tube fiber of a tensor.
///
/// Stored frontal-slice-major: coefficient `h` of tube `(i, j)` is at
/// `h * (m * l) + i * l + j`, so each slice `Â[:, :, h]` is a contiguous
/// row-major `m × l` block.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTensor3 {
    shape: Shape3,
    data: Vec<Complex64>,
    // Set when the source was real, i.e. slice n-h is the conjugate of slice h.
    conj_symmetric: bool,
}

impl SpectralTensor3 {
    pub fn zeros(shape: Shape3) -> Self {
        Self {
            shape,
            data: vec![Complex64::new(0.0, 0.0); shape.len()],
            conj_symmetric: true,
        }
    }

    /// Wraps raw slice-major coefficients. Symmetry is not assumed.
    pub fn from_slices(shape: Shape3, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "{shape} spectral tensor needs {} entries, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            conj_symmetric: false,
        })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn is_conj_symmetric(&self) -> bool {
        self.conj_symmetric
    }

    #[inline]
    fn slice_len(&self) -> usize {
        self.shape.rows * self.shape.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, h: usize) -> Complex64 {
        self.data[h * self.slice_len() + i * self.shape.cols + j]
    }

    /// Frontal slice `h` as a row-major `m × l` block.
    pub fn slice(&self, h: usize) -> &[Complex64] {
        let len = self.slice_len();
        &self.data[h * len..(h + 1) * len]
    }

    pub(crate) fn slice_mut(&mut self, h: usize) -> &mut [Complex64] {
        let len = self.slice_len();
        &mut self.data[h * len..(h + 1) * len]
    }

    pub fn slice_matrix(&self, h: usize) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.shape.rows, self.shape.cols, self.slice(h))
    }

    /// Row `i` of frontal slice `h`, a length-`l` vector.
    pub fn row(&self, i: usize, h: usize) -> &[Complex64] {
        let start = h * self.slice_len() + i * self.shape.cols;
        &self.data[start..start + self.shape.cols]
    }

    /// Number of leading slices that determine the whole tensor: `⌊n/2⌋ + 1`
    /// for a conjugate-symmetric tensor, `n` otherwise.
    pub(crate) fn independent_slices(&self) -> usize {
        if self.conj_symmetric {
            self.shape.depth / 2 + 1
        } else {
            self.shape.depth
        }
    }

    /// Overwrites slices above `⌊n/2⌋` with conjugates of their mirrors.
    pub(crate) fn mirror_conjugates(&mut self) {
        let n = self.shape.depth;
        let len = self.slice_len();
        for h in (n / 2 + 1)..n {
            let (lo, hi) = self.data.split_at_mut(h * len);
            let src = &lo[(n - h) * len..(n - h + 1) * len];
            for (d, s) in hi[..len].iter_mut().zip(src) {
                *d = s.conj();
            }
        }
        self.conj_symmetric = true;
    }

    /// Per-slice matrix product `Ĉ_h = Â_h B̂_h`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (a, b) = (self.shape, other.shape);
        if a.cols != b.rows || a.depth != b.depth {
            return Err(Error::shape(format!(
                "spectral product of {a} and {b} is undefined"
            )));
        }
        let shape = Shape3::new(a.rows, b.cols, a.depth);
        let mut out = Self::zeros(shape);
        let symmetric = self.conj_symmetric && other.conj_symmetric;
        let upto = if symmetric { a.depth / 2 + 1 } else { a.depth };
        for h in 0..upto {
            let (sa, sb) = (self.slice(h), other.slice(h));
            let sc = out.slice_mut(h);
            for i in 0..a.rows {
                let arow = &sa[i * a.cols..(i + 1) * a.cols];
                let crow = &mut sc[i * b.cols..(i + 1) * b.cols];
                for (k, &aik) in arow.iter().enumerate() {
                    let brow = &sb[k * b.cols..(k + 1) * b.cols];
                    for (c, &bkj) in crow.iter_mut().zip(brow) {
                        *c += aik * bkj;
                    }
                }
            }
        }
        if symmetric {
            out.mirror_conjugates();
        } else {
            out.conj_symmetric = false;
        }
        Ok(out)
    }

    /// `Σ |ĉ|²` over every coefficient.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Cached forward/inverse plans for tubes of one length.
pub(crate) struct TubeFft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl TubeFft {
    pub(crate) fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub(crate) fn forward(&self, a: &DenseTensor3) -> SpectralTensor3 {
        let shape = a.shape();
        debug_assert_eq!(shape.depth, self.n);
        let (m, l, n) = (shape.rows, shape.cols, shape.depth);
        let mut out = SpectralTensor3::zeros(shape);
        if shape.is_empty() {
            return out;
        }
        let mut buf: Vec<Complex64> = a.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let len = m * l;
        for (t, tube) in buf.chunks_exact(n).enumerate() {
            for (h, &c) in tube.iter().enumerate() {
                out.data[h * len + t] = c;
            }
        }
        out
    }

    pub(crate) fn inverse(&self, s: &SpectralTensor3) -> Result<DenseTensor3> {
        let shape = s.shape();
        debug_assert_eq!(shape.depth, self.n);
        let (m, l, n) = (shape.rows, shape.cols, shape.depth);
        let len = m * l;
        let mut buf = vec![Complex64::new(0.0, 0.0); shape.len()];
        for (t, tube) in buf.chunks_exact_mut(n).enumerate() {
            for (h, c) in tube.iter_mut().enumerate() {
                *c = s.data[h * len + t];
            }
        }
        if !buf.is_empty() {
            self.inverse.process(&mut buf);
        }
        let scale = 1.0 / n as f64;
        let mut data = Vec::with_capacity(buf.len());
        for (k, c) in buf.iter().enumerate() {
            let im = c.im * scale;
            if im.abs() > IFFT_IMAG_TOLERANCE || !im.is_finite() {
                let (t, h) = (k / n, k % n);
                return Err(Error::Numerical(format!(
                    "inverse tube DFT left imaginary part {im:e} at ({}, {}, {h})",
                    t / l,
                    t % l
                )));
            }
            data.push(c.re * scale);
        }
        DenseTensor3::from_vec(m, l, n, data)
    }
}

/// Unnormalized forward DFT of every tube fiber.
pub fn fft_tubes(a: &DenseTensor3) -> SpectralTensor3 {
    TubeFft::new(a.depth()).forward(a)
}

/// Inverse of [`fft_tubes`] (applies the `1/n` factor). Fails if any
/// imaginary residue exceeds [`IFFT_IMAG_TOLERANCE`].
pub fn ifft_tubes(s: &SpectralTensor3) -> Result<DenseTensor3> {
    TubeFft::new(s.shape().depth).inverse(s)
}
