//! Residuals, the empirical quantile, and the row-slice projection.

use crate::error::{Error, Result};
use crate::spectral::SINGULAR_ROW_TOL;
use crate::tensor::fourier::TubeFft;
use crate::tensor::{tprod, DenseTensor3, Shape3, SpectralTensor3};

/// `E = A ∗ X − B`.
pub fn residual(a: &DenseTensor3, x: &DenseTensor3, b: &DenseTensor3) -> Result<DenseTensor3> {
    let ax = tprod(a, x)?;
    if ax.shape() != b.shape() {
        return Err(Error::shape(format!(
            "A*X has shape {} but B has shape {}",
            ax.shape(),
            b.shape()
        )));
    }
    ax.sub(b)
}

/// Index of the order statistic used by [`q_quantile`]: `⌊q · count⌋`.
///
/// A tiny upward nudge absorbs products such as `0.29 * 100 = 28.999…`.
pub fn quantile_rank(q: f64, count: usize) -> usize {
    ((q * count as f64) + 1e-9).floor() as usize
}

/// The `⌊q·N⌋`-th smallest (1-indexed) absolute entry of `e`.
pub fn q_quantile(e: &DenseTensor3, q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::domain(format!("quantile level {q} outside (0, 1]")));
    }
    let n = e.data().len();
    let k = quantile_rank(q, n).min(n);
    if k == 0 {
        return Err(Error::domain(format!(
            "quantile index zero (q = {q}, {n} entries)"
        )));
    }
    let mut abs: Vec<f64> = e.data().iter().map(|v| v.abs()).collect();
    let (_, kth, _) = abs.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// Solution-space projection onto row slice `i`:
/// `X − A_i^*(A_i A_i^*)^{-1}(A_i ∗ X − B_i)`.
pub fn project_row(
    x: &DenseTensor3,
    a_spectral: &SpectralTensor3,
    b: &DenseTensor3,
    i: usize,
) -> Result<DenseTensor3> {
    let keep = vec![true; x.cols()];
    project_row_masked(x, a_spectral, b, i, &keep)
}

/// Like [`project_row`] but only column slices with `keep_cols[j]` set are
/// updated; every other column is returned bitwise unchanged.
pub fn project_row_masked(
    x: &DenseTensor3,
    a_spectral: &SpectralTensor3,
    b: &DenseTensor3,
    i: usize,
    keep_cols: &[bool],
) -> Result<DenseTensor3> {
    let s = a_spectral.shape();
    check_system_shapes(s, x.shape(), b.shape())?;
    if i >= s.rows {
        return Err(Error::domain(format!("row {i} out of range for {} rows", s.rows)));
    }
    if keep_cols.len() != x.cols() {
        return Err(Error::shape(format!(
            "column mask has {} entries for {} columns",
            keep_cols.len(),
            x.cols()
        )));
    }
    let fft = TubeFft::new(s.depth);
    let xh = fft.forward(x);
    let bh = fft.forward(b);
    let mut out = x.clone();
    apply_row_projection(&mut out, &xh, a_spectral, &bh, i, keep_cols, &fft)?;
    Ok(out)
}

pub(crate) fn check_system_shapes(a: Shape3, x: Shape3, b: Shape3) -> Result<()> {
    if x.rows != a.cols || x.depth != a.depth || b.rows != a.rows || b.cols != x.cols || b.depth != a.depth {
        return Err(Error::shape(format!(
            "system A {a}, X {x}, B {b} does not conform"
        )));
    }
    Ok(())
}

/// Subtracts the (masked) projection correction for row `i` from `x` in place.
/// `xh` must be the tube DFT of `x`, `bh` that of `B`.
pub(crate) fn apply_row_projection(
    x: &mut DenseTensor3,
    xh: &SpectralTensor3,
    ah: &SpectralTensor3,
    bh: &SpectralTensor3,
    i: usize,
    keep_cols: &[bool],
    fft: &TubeFft,
) -> Result<()> {
    let Shape3 {
        rows: _,
        cols: l,
        depth: n,
    } = ah.shape();
    let p = x.cols();
    // Every slice is checked so that a singular row fails regardless of mask.
    let mut norm_sq = vec![0.0; n];
    for (h, ns) in norm_sq.iter_mut().enumerate() {
        *ns = ah.row(i, h).iter().map(|c| c.norm_sqr()).sum::<f64>();
        let norm = ns.sqrt();
        if !(norm >= SINGULAR_ROW_TOL) {
            return Err(Error::SingularRow { row: i, slice: h, norm });
        }
    }
    if !keep_cols.iter().any(|&k| k) {
        return Ok(());
    }

    let mut corr = SpectralTensor3::zeros(Shape3::new(l, p, n));
    for h in 0..n / 2 + 1 {
        let arow = ah.row(i, h);
        let xs = xh.slice(h);
        let brow = bh.row(i, h);
        let cs = corr.slice_mut(h);
        for c in (0..p).filter(|&c| keep_cols[c]) {
            let mut r = -brow[c];
            for j in 0..l {
                r += arow[j] * xs[j * p + c];
            }
            let scaled = r / norm_sq[h];
            for j in 0..l {
                cs[j * p + c] = arow[j].conj() * scaled;
            }
        }
    }
    corr.mirror_conjugates();
    let delta = fft.inverse(&corr)?;
    for j in (0..p).filter(|&c| keep_cols[c]) {
        for r in 0..l {
            let d = delta.tube(r, j);
            for (xv, dv) in x.tube_mut(r, j).iter_mut().zip(d) {
                *xv -= dv;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{bcirc, fft_tubes, fold, unfold};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn quantile_examples() {
        let e = DenseTensor3::from_vec(1, 1, 4, vec![-3.0, 1.0, 4.0, -2.0]).unwrap();
        assert_eq!(q_quantile(&e, 0.5).unwrap(), 2.0);
        assert_eq!(q_quantile(&e, 1.0).unwrap(), 4.0);
        assert!(matches!(q_quantile(&e, 0.2), Err(Error::Domain(_))));
        assert!(q_quantile(&e, 0.0).is_err());
        assert!(q_quantile(&e, 1.5).is_err());
    }

    #[test]
    fn quantile_rank_absorbs_rounding() {
        assert_eq!(quantile_rank(0.29, 100), 29);
        assert_eq!(quantile_rank(0.975, 1000), 975);
        assert_eq!(quantile_rank(0.9, 200), 180);
    }

    #[test]
    fn quantile_matches_sort_oracle() {
        let e = DenseTensor3::random_normal(5, 4, 10, &mut rng(1));
        let mut sorted: Vec<f64> = e.data().iter().map(|v| v.abs()).collect();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(q_quantile(&e, 0.9).unwrap(), sorted[179]);
    }

    #[test]
    fn residual_cases() {
        let a = DenseTensor3::random_normal(4, 3, 5, &mut rng(2));
        let x = DenseTensor3::random_normal(3, 2, 5, &mut rng(3));
        let b = tprod(&a, &x).unwrap();
        assert!(residual(&a, &x, &b).unwrap().frobenius() < 1e-10);
        let z = DenseTensor3::zeros(3, 2, 5);
        let e = residual(&a, &z, &b).unwrap();
        assert!(e.max_abs_diff(&b.scale(-1.0)).unwrap() < 1e-15);

        let other = DenseTensor3::random_normal(4, 2, 5, &mut rng(4));
        let oracle = fold(&(bcirc(&a) * unfold(&x)), 5).unwrap().sub(&other).unwrap();
        let got = residual(&a, &x, &other).unwrap();
        assert!(got.max_abs_diff(&oracle).unwrap() < 1e-12);
        assert!(residual(&a, &DenseTensor3::zeros(2, 2, 5), &b).is_err());
    }

    #[test]
    fn projection_fixed_point_and_single_row() {
        let a = DenseTensor3::random_normal(4, 3, 5, &mut rng(5));
        let x = DenseTensor3::random_normal(3, 2, 5, &mut rng(6));
        let b = tprod(&a, &x).unwrap();
        let ah = fft_tubes(&a);
        let x2 = project_row(&x, &ah, &b, 2).unwrap();
        assert!(x2.max_abs_diff(&x).unwrap() < 1e-12);

        let a1 = DenseTensor3::random_normal(1, 3, 4, &mut rng(7));
        let b1 = DenseTensor3::random_normal(1, 2, 4, &mut rng(8));
        let x1 = project_row(&DenseTensor3::zeros(3, 2, 4), &fft_tubes(&a1), &b1, 0).unwrap();
        assert!(residual(&a1, &x1, &b1).unwrap().frobenius() < 1e-12);
    }

    #[test]
    fn projection_matches_pinv_oracle() {
        let a = DenseTensor3::random_normal(4, 3, 2, &mut rng(9));
        let x = DenseTensor3::random_normal(3, 2, 2, &mut rng(10));
        let b = DenseTensor3::random_normal(4, 2, 2, &mut rng(11));
        let i = 1;
        let ai = bcirc(&a.row_slice(i).unwrap().to_tensor());
        let bi = unfold(&b.row_slice(i).unwrap().to_tensor());
        let pinv = ai.clone().pseudo_inverse(1e-14).unwrap();
        let update = pinv * (&ai * unfold(&x) - bi);
        let oracle = fold(&(unfold(&x) - update), 2).unwrap();
        let got = project_row(&x, &fft_tubes(&a), &b, i).unwrap();
        assert!(got.max_abs_diff(&oracle).unwrap() < 1e-10);
    }

    #[test]
    fn masked_projection_cases() {
        let a = DenseTensor3::random_normal(5, 3, 4, &mut rng(12));
        let x = DenseTensor3::random_normal(3, 3, 4, &mut rng(13));
        let b = DenseTensor3::random_normal(5, 3, 4, &mut rng(14));
        let ah = fft_tubes(&a);
        let full = project_row(&x, &ah, &b, 3).unwrap();
        let all = project_row_masked(&x, &ah, &b, 3, &[true; 3]).unwrap();
        assert_eq!(full, all);
        let none = project_row_masked(&x, &ah, &b, 3, &[false; 3]).unwrap();
        assert_eq!(none, x);

        let one = project_row_masked(&x, &ah, &b, 3, &[false, true, false]).unwrap();
        for r in 0..3 {
            assert_eq!(one.tube(r, 0), x.tube(r, 0));
            assert_eq!(one.tube(r, 2), x.tube(r, 2));
            for h in 0..4 {
                assert!((one.get(r, 1, h) - full.get(r, 1, h)).abs() < 1e-14);
            }
        }
        assert!(project_row_masked(&x, &ah, &b, 3, &[true; 2]).is_err());
    }

    #[test]
    fn singular_row_is_reported() {
        let mut a = DenseTensor3::random_normal(3, 1, 2, &mut rng(15));
        a.set(0, 0, 0, 2.0);
        a.set(0, 0, 1, -2.0); // DFT vanishes at h = 0
        let x = DenseTensor3::zeros(1, 1, 2);
        let b = DenseTensor3::zeros(3, 1, 2);
        match project_row(&x, &fft_tubes(&a), &b, 0) {
            Err(Error::SingularRow { row: 0, slice: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
