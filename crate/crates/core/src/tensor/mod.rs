//! Dense third-order tensors and the t-product algebra.
//!
//! Storage is tube-fiber-contiguous: element `(i, j, h)` of an `m × l × n`
//! tensor lives at offset `((i * l) + j) * n + h`, so every tube `A[i, j, :]`
//! is a stride-1 slice and the per-tube DFT never gathers.
//!
//! The t-product is evaluated in the Fourier domain (one complex matrix
//! product per frontal slice); [`bcirc`], [`unfold`] and [`fold`] give the
//! explicit block-circulant form, which the test suites use as an oracle.

pub(crate) mod fourier;
pub mod io;

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use fourier::{fft_tubes, ifft_tubes, SpectralTensor3, IFFT_IMAG_TOLERANCE};

/// Dimensions `(rows, cols, depth)` of a third-order tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape3 {
    pub rows: usize,
    pub cols: usize,
    pub depth: usize,
}

impl Shape3 {
    pub const fn new(rows: usize, cols: usize, depth: usize) -> Self {
        Self { rows, cols, depth }
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols * self.depth
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn offset(&self, i: usize, j: usize, h: usize) -> usize {
        (i * self.cols + j) * self.depth + h
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.rows, self.cols, self.depth)
    }
}

/// A real `m × l × n` tensor. Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    shape: Shape3,
    data: Vec<f64>,
}

impl DenseTensor3 {
    pub fn zeros(rows: usize, cols: usize, depth: usize) -> Self {
        let shape = Shape3::new(rows, cols, depth);
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    /// Builds a tensor from tube-fiber-contiguous data.
    pub fn from_vec(rows: usize, cols: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape3::new(rows, cols, depth);
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "{shape} tensor needs {} entries, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite entry {} at offset {pos}",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor by evaluating `f(i, j, h)` at every index.
    ///
    /// Panics if `f` produces a non-finite value.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        depth: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let shape = Shape3::new(rows, cols, depth);
        let mut data = Vec::with_capacity(shape.len());
        for i in 0..rows {
            for j in 0..cols {
                for h in 0..depth {
                    let v = f(i, j, h);
                    assert!(v.is_finite(), "non-finite entry at ({i}, {j}, {h})");
                    data.push(v);
                }
            }
        }
        Self { shape, data }
    }

    /// The tensor identity: first frontal slice is `I`, the rest are zero.
    pub fn identity(size: usize, depth: usize) -> Self {
        Self::from_fn(size, size, depth, |i, j, h| {
            if i == j && h == 0 {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Entries drawn i.i.d. from the standard normal distribution.
    pub fn random_normal<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        let shape = Shape3::new(rows, cols, depth);
        let data = (0..shape.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }

    pub fn depth(&self) -> usize {
        self.shape.depth
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, h: usize) -> f64 {
        debug_assert!(i < self.shape.rows && j < self.shape.cols && h < self.shape.depth);
        self.data[self.shape.offset(i, j, h)]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, h: usize, value: f64) {
        let off = self.shape.offset(i, j, h);
        self.data[off] = value;
    }

    /// The tube fiber `A[i, j, :]`.
    pub fn tube(&self, i: usize, j: usize) -> &[f64] {
        let start = self.shape.offset(i, j, 0);
        &self.data[start..start + self.shape.depth]
    }

    pub(crate) fn tube_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let start = self.shape.offset(i, j, 0);
        let n = self.shape.depth;
        &mut self.data[start..start + n]
    }

    pub fn frobenius(&self) -> f64 {
        frobenius(self)
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: shapes {} and {} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            shape: self.shape,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self {
            shape: self.shape,
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn row_slice(&self, i: usize) -> Result<SliceView<'_>> {
        SliceView::new(self, SliceAxis::Row, i)
    }

    pub fn col_slice(&self, j: usize) -> Result<SliceView<'_>> {
        SliceView::new(self, SliceAxis::Column, j)
    }

    pub fn frontal_slice(&self, h: usize) -> Result<SliceView<'_>> {
        SliceView::new(self, SliceAxis::Frontal, h)
    }

    /// Frontal slice `h` as a dense `m × l` matrix.
    pub fn frontal_matrix(&self, h: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.shape.rows, self.shape.cols, |i, j| self.get(i, j, h))
    }
}

/// Which family of 2-D sections a [`SliceView`] selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceAxis {
    /// Horizontal slice `A[i, :, :]`, shape `1 × l × n`.
    Row,
    /// Lateral slice `A[:, j, :]`, shape `m × 1 × n`.
    Column,
    /// Frontal slice `A[:, :, h]`, shape `m × l × 1`.
    Frontal,
}

/// Read-only view of one slice of a [`DenseTensor3`].
#[derive(Debug, Clone, Copy)]
pub struct SliceView<'a> {
    parent: &'a DenseTensor3,
    axis: SliceAxis,
    index: usize,
}

impl<'a> SliceView<'a> {
    fn new(parent: &'a DenseTensor3, axis: SliceAxis, index: usize) -> Result<Self> {
        let bound = match axis {
            SliceAxis::Row => parent.rows(),
            SliceAxis::Column => parent.cols(),
            SliceAxis::Frontal => parent.depth(),
        };
        if index >= bound {
            return Err(Error::shape(format!(
                "{axis:?} slice index {index} out of bounds for {} tensor",
                parent.shape()
            )));
        }
        Ok(Self {
            parent,
            axis,
            index,
        })
    }

    pub fn axis(&self) -> SliceAxis {
        self.axis
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Shape of the slice as a third-order tensor (the selected mode has size 1).
    pub fn shape(&self) -> Shape3 {
        let s = self.parent.shape();
        match self.axis {
            SliceAxis::Row => Shape3::new(1, s.cols, s.depth),
            SliceAxis::Column => Shape3::new(s.rows, 1, s.depth),
            SliceAxis::Frontal => Shape3::new(s.rows, s.cols, 1),
        }
    }

    /// Entry at slice-local coordinates; the fixed mode is omitted.
    pub fn get(&self, a: usize, b: usize) -> f64 {
        match self.axis {
            SliceAxis::Row => self.parent.get(self.index, a, b),
            SliceAxis::Column => self.parent.get(a, self.index, b),
            SliceAxis::Frontal => self.parent.get(a, b, self.index),
        }
    }

    pub fn to_tensor(&self) -> DenseTensor3 {
        let s = self.shape();
        let (p, axis, idx) = (self.parent, self.axis, self.index);
        DenseTensor3::from_fn(s.rows, s.cols, s.depth, |i, j, h| match axis {
            SliceAxis::Row => p.get(idx, j, h),
            SliceAxis::Column => p.get(i, idx, h),
            SliceAxis::Frontal => p.get(i, j, idx),
        })
    }
}

/// Euclidean norm over all entries.
pub fn frobenius(a: &DenseTensor3) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖X⋆ − X‖_F / ‖X⋆‖_F`.
pub fn relative_error(x: &DenseTensor3, x_star: &DenseTensor3) -> Result<f64> {
    let denom = frobenius(x_star);
    if denom == 0.0 {
        return Err(Error::domain("relative error against a zero-norm reference"));
    }
    let diff = x_star.sub(x)?;
    Ok(frobenius(&diff) / denom)
}

fn check_conformable(a: &DenseTensor3, b: &DenseTensor3) -> Result<()> {
    if a.cols() != b.rows() || a.depth() != b.depth() {
        return Err(Error::shape(format!(
            "t-product of {} and {} is undefined",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// The t-product `A ∗ B`, evaluated slice-wise in the Fourier domain.
pub fn tprod(a: &DenseTensor3, b: &DenseTensor3) -> Result<DenseTensor3> {
    check_conformable(a, b)?;
    let ah = fft_tubes(a);
    let bh = fft_tubes(b);
    ifft_tubes(&ah.matmul(&bh)?)
}

/// The t-product through the explicit block-circulant matrix. Quadratic in
/// `n`; kept for cross-checking [`tprod`].
pub fn tprod_bcirc(a: &DenseTensor3, b: &DenseTensor3) -> Result<DenseTensor3> {
    check_conformable(a, b)?;
    fold(&(bcirc(a) * unfold(b)), a.depth())
}

/// The `mn × ln` block-circulant matrix: block `(r, c)` is frontal slice
/// `(r - c) mod n`.
pub fn bcirc(a: &DenseTensor3) -> DMatrix<f64> {
    let Shape3 {
        rows: m,
        cols: l,
        depth: n,
    } = a.shape();
    DMatrix::from_fn(m * n, l * n, |r, c| {
        let (br, i) = (r / m, r % m);
        let (bc, j) = (c / l, c % l);
        a.get(i, j, (br + n - bc) % n)
    })
}

/// Stacks the frontal slices vertically: an `l × p × n` tensor becomes `ln × p`.
pub fn unfold(b: &DenseTensor3) -> DMatrix<f64> {
    let Shape3 {
        rows: l,
        cols: p,
        depth: _,
    } = b.shape();
    DMatrix::from_fn(b.rows() * b.depth(), p, |r, c| b.get(r % l, c, r / l))
}

/// Inverse of [`unfold`] for a tensor of depth `depth`.
pub fn fold(mat: &DMatrix<f64>, depth: usize) -> Result<DenseTensor3> {
    if depth == 0 || !mat.nrows().is_multiple_of(depth) {
        return Err(Error::shape(format!(
            "cannot fold a {}x{} matrix into depth {depth}",
            mat.nrows(),
            mat.ncols()
        )));
    }
    let rows = mat.nrows() / depth;
    let mut out = DenseTensor3::zeros(rows, mat.ncols(), depth);
    for h in 0..depth {
        for i in 0..rows {
            for j in 0..mat.ncols() {
                let v = mat[(h * rows + i, j)];
                if !v.is_finite() {
                    return Err(Error::domain(format!("non-finite entry at ({i}, {j}, {h})")));
                }
                out.set(i, j, h, v);
            }
        }
    }
    Ok(out)
}

/// Tensor transpose: transpose every frontal slice, then reverse slices `2..n`.
pub fn ttranspose(a: &DenseTensor3) -> DenseTensor3 {
    let n = a.depth();
    DenseTensor3::from_fn(a.cols(), a.rows(), n, |j, i, k| {
        a.get(i, j, (n - k) % n)
    })
}
