//! Video deblurring posed as a t-product system.
//!
//! A video `X` of `n` frames of size `l × p` (stored `l × p × n`) blurred
//! frame by frame with a 2-D circular convolution kernel becomes
//! `H ∗ X̃ = Ỹ`, where `X̃ = reorder_to_system(X)` is `p × n × l` and the
//! blur tensor `H` is `p × p × l` with frontal slice `i` equal to
//! `circ(row i of the padded kernel)`.
//!
//! Kernels are anchored at the index origin, so a blurred frame is shifted by
//! the kernel's half-width relative to a centred convolution.
//! [`center_shift`] undoes that for display only.

pub mod pgm;

use std::path::Path;

use nalgebra::DMatrix;

use crate::corruption::CorruptionPlan;
use crate::error::{Error, Result};
use crate::solvers::{least_norm_solve, solve_with_reference, RunRecord, SolverConfig};
use crate::tensor::{relative_error, tprod, DenseTensor3};

/// Tolerance on the kernel sum after normalization.
const KERNEL_SUM_TOL: f64 = 1e-12;

/// `n` frames of `l × p` intensities, stored as an `l × p × n` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFrames {
    data: DenseTensor3,
}

impl VideoFrames {
    /// Wraps a tensor, clamping every intensity into `[0, 1]`.
    pub fn from_tensor(t: &DenseTensor3) -> Self {
        let s = t.shape();
        let data = DenseTensor3::from_fn(s.rows, s.cols, s.depth, |i, j, h| {
            t.get(i, j, h).clamp(0.0, 1.0)
        });
        Self { data }
    }

    pub fn from_frames(frames: &[DMatrix<f64>]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::domain("a video needs at least one frame"))?;
        let (l, p) = first.shape();
        if let Some(t) = frames.iter().position(|f| f.shape() != (l, p)) {
            return Err(Error::shape(format!(
                "frame {t} is {}x{}, expected {l}x{p}",
                frames[t].nrows(),
                frames[t].ncols()
            )));
        }
        let raw = DenseTensor3::from_fn(l, p, frames.len(), |i, j, t| {
            let v = frames[t][(i, j)];
            if v.is_finite() { v } else { 0.0 }
        });
        Ok(Self::from_tensor(&raw))
    }

    pub fn tensor(&self) -> &DenseTensor3 {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.rows()
    }

    pub fn width(&self) -> usize {
        self.data.cols()
    }

    pub fn frame_count(&self) -> usize {
        self.data.depth()
    }

    pub fn frame(&self, t: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.height(), self.width(), |i, j| self.data.get(i, j, t))
    }

    /// Reads every `*.pgm` in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let paths = pgm::list_frames(dir)?;
        if paths.is_empty() {
            return Err(Error::Format(format!("no .pgm frames in {}", dir.display())));
        }
        let frames = paths.iter().map(|p| pgm::read_pgm(p)).collect::<Result<Vec<_>>>()?;
        Self::from_frames(&frames)
    }
}

/// Writes each frame of `t` (`l × p × n`) as `<dir>/<prefix>_<t>.pgm`,
/// clamped to `[0, 1]` and quantized to 8 bits.
pub fn save_frames(t: &DenseTensor3, dir: &Path, prefix: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for k in 0..t.depth() {
        let img = DMatrix::from_fn(t.rows(), t.cols(), |i, j| t.get(i, j, k));
        pgm::write_pgm(&dir.join(format!("{prefix}_{k:03}.pgm")), &img)?;
    }
    Ok(())
}

/// A normalized convolution kernel no larger than the frames it blurs.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurSpec {
    kernel: DMatrix<f64>,
}

impl BlurSpec {
    /// Rescales `kernel` to sum to one.
    pub fn new(kernel: DMatrix<f64>) -> Result<Self> {
        let sum = kernel.sum();
        if kernel.is_empty() || !sum.is_finite() || sum == 0.0 || kernel.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("blur kernel must be finite with a nonzero sum"));
        }
        let kernel = kernel / sum;
        debug_assert!((kernel.sum() - 1.0).abs() < KERNEL_SUM_TOL);
        Ok(Self { kernel })
    }

    /// `size × size` samples of `exp(−(x² + y²)/(2σ²))` centred on the middle
    /// entry, normalized to sum one.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if size == 0 || !(sigma > 0.0) {
            return Err(Error::domain(format!(
                "Gaussian kernel needs size > 0 and sigma > 0 (got {size}, {sigma})"
            )));
        }
        let c = (size as f64 - 1.0) / 2.0;
        let k = DMatrix::from_fn(size, size, |y, x| {
            let (dy, dx) = (y as f64 - c, x as f64 - c);
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        });
        Self::new(k)
    }

    pub fn delta() -> Self {
        Self {
            kernel: DMatrix::from_element(1, 1, 1.0),
        }
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }
}

/// Places `kernel` in the top-left corner of an `l × p` zero matrix.
pub fn pad_kernel(kernel: &DMatrix<f64>, l: usize, p: usize) -> Result<DMatrix<f64>> {
    let (kl, kp) = kernel.shape();
    if kl > l || kp > p {
        return Err(Error::shape(format!(
            "kernel {kl}x{kp} does not fit in a {l}x{p} frame"
        )));
    }
    let mut out = DMatrix::zeros(l, p);
    out.view_mut((0, 0), (kl, kp)).copy_from(kernel);
    Ok(out)
}

/// `p × p × l` tensor whose frontal slice `i` is the circulant matrix with
/// first column equal to row `i` of `h_padded`.
pub fn blur_tensor(h_padded: &DMatrix<f64>) -> DenseTensor3 {
    let (l, p) = h_padded.shape();
    DenseTensor3::from_fn(p, p, l, |r, c, i| h_padded[(i, (r + p - c) % p)])
}

/// `X̃(j, t, i) = X(i, j, t)`: `l × p × n` video to `p × n × l` system form.
pub fn reorder_to_system(video: &DenseTensor3) -> DenseTensor3 {
    let s = video.shape();
    DenseTensor3::from_fn(s.cols, s.depth, s.rows, |j, t, i| video.get(i, j, t))
}

/// Inverse of [`reorder_to_system`].
pub fn reorder_from_system(x: &DenseTensor3) -> DenseTensor3 {
    let s = x.shape();
    DenseTensor3::from_fn(s.depth, s.rows, s.cols, |i, j, t| x.get(j, t, i))
}

/// Blurs every frame of an `l × p × n` video by circular convolution.
pub fn blur_video(video: &DenseTensor3, blur: &BlurSpec) -> Result<DenseTensor3> {
    let h = blur_tensor(&pad_kernel(blur.kernel(), video.rows(), video.cols())?);
    Ok(reorder_from_system(&tprod(&h, &reorder_to_system(video))?))
}

/// Cyclically shifts each frame up and left by the kernel's half-size,
/// aligning an origin-anchored blur with a centred one.
pub fn center_shift(video: &DenseTensor3, blur: &BlurSpec) -> DenseTensor3 {
    let (kl, kp) = blur.kernel().shape();
    let (dy, dx) = ((kl - 1) / 2, (kp - 1) / 2);
    let s = video.shape();
    DenseTensor3::from_fn(s.rows, s.cols, s.depth, |i, j, t| {
        video.get((i + dy) % s.rows, (j + dx) % s.cols, t)
    })
}

/// A deterministic test video: two bright ellipses drifting across a dim
/// gradient background.
pub fn synthetic_video(height: usize, width: usize, frames: usize) -> DenseTensor3 {
    DenseTensor3::from_fn(height, width, frames, |y, x, t| {
        let v = (y as f64 + 0.5) / height as f64;
        let u = (x as f64 + 0.5) / width as f64;
        let phase = t as f64 / frames.max(1) as f64;
        let mut val = 0.1 + 0.15 * u;
        let (cu, cv) = (0.35 + 0.3 * phase, 0.45);
        if ((u - cu) / 0.22).powi(2) + ((v - cv) / 0.3).powi(2) <= 1.0 {
            val = 0.55;
        }
        let (du, dv) = (0.7 - 0.2 * phase, 0.3 + 0.3 * phase);
        if ((u - du) / 0.1).powi(2) + ((v - dv) / 0.1).powi(2) <= 1.0 {
            val = 0.9;
        }
        val
    })
}

/// Peak signal-to-noise ratio (peak 1) of `est` against `truth` over the
/// pixels selected by `mask(i, j)`. Infinite for an exact match.
pub fn psnr_masked(
    est: &DenseTensor3,
    truth: &DenseTensor3,
    mask: impl Fn(usize, usize) -> bool,
) -> Result<f64> {
    if est.shape() != truth.shape() {
        return Err(Error::shape(format!(
            "PSNR of {} against {}",
            est.shape(),
            truth.shape()
        )));
    }
    let s = truth.shape();
    let (mut sse, mut count) = (0.0, 0usize);
    for i in 0..s.rows {
        for j in (0..s.cols).filter(|&j| mask(i, j)) {
            for (a, b) in est.tube(i, j).iter().zip(truth.tube(i, j)) {
                sse += (a - b) * (a - b);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::domain("PSNR over an empty region"));
    }
    let mse = sse / count as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

pub fn psnr(est: &DenseTensor3, truth: &DenseTensor3) -> Result<f64> {
    psnr_masked(est, truth, |_, _| true)
}

/// Where the iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialGuess {
    #[default]
    Zeros,
    /// The corrupted blurred video itself.
    Observed,
}

/// Everything produced by [`run_deblur`]. Videos are `l × p × n`.
#[derive(Debug, Clone)]
pub struct DeblurOutcome {
    pub recovered: DenseTensor3,
    pub baseline: DenseTensor3,
    pub blurred: DenseTensor3,
    pub observed: DenseTensor3,
    pub record: RunRecord,
    /// `‖Ỹ − H ∗ X_ln‖_F / ‖Ỹ‖_F` for the least-norm baseline.
    pub baseline_rel_residual: f64,
    /// PSNR over image columns whose system row slice is uncorrupted.
    pub psnr_recovered: f64,
    pub psnr_baseline: f64,
}

/// Blurs `video`, corrupts the system right-hand side `Ỹ` (shape `p × n × l`)
/// with `plan`, then solves with `config` and with the least-norm baseline.
/// Residuals are measured against the uncorrupted `Ỹ`.
pub fn run_deblur(
    video: &VideoFrames,
    blur: &BlurSpec,
    plan: &CorruptionPlan,
    config: &SolverConfig,
    init: InitialGuess,
) -> Result<DeblurOutcome> {
    let x = video.tensor();
    let h = blur_tensor(&pad_kernel(blur.kernel(), x.rows(), x.cols())?);
    let x_sys = reorder_to_system(x);
    let y = tprod(&h, &x_sys)?;
    let y_c = plan.apply(&y)?;
    let x0 = match init {
        InitialGuess::Zeros => DenseTensor3::zeros(x_sys.rows(), x_sys.cols(), x_sys.depth()),
        InitialGuess::Observed => y_c.clone(),
    };
    let (x_k, record) = solve_with_reference(&h, &y_c, config, Some(&x_sys), &x0, &y)?;
    let x_ln = least_norm_solve(&h, &y_c)?;
    let y_norm = y.frobenius();
    let ln_res = tprod(&h, &x_ln)?.sub(&y)?.frobenius();
    let baseline_rel_residual = if y_norm > 0.0 { ln_res / y_norm } else { ln_res };

    let recovered = reorder_from_system(&x_k);
    let baseline = reorder_from_system(&x_ln);
    let bad_rows = plan.corrupted_rows();
    let clean = |_: usize, j: usize| bad_rows.binary_search(&j).is_err();
    Ok(DeblurOutcome {
        psnr_recovered: psnr_masked(&recovered, x, clean)?,
        psnr_baseline: psnr_masked(&baseline, x, clean)?,
        recovered,
        baseline,
        blurred: reorder_from_system(&y),
        observed: reorder_from_system(&y_c),
        record,
        baseline_rel_residual,
    })
}

/// Relative error of a recovered video against the original.
pub fn recovery_error(recovered: &DenseTensor3, truth: &DenseTensor3) -> Result<f64> {
    relative_error(recovered, truth)
}
