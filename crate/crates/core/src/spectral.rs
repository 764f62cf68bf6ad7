//! Spectral constants of block-circulant operators and the convergence-rate
//! formulas for the quantile solvers.
//!
//! `bcirc(A)` is block-diagonalized by the tube DFT, so every quantity here is
//! computed from the frontal slices `Â[:, :, h]` instead of the `mn × ln`
//! matrix. For a real tensor slice `n - h` is the conjugate of slice `h` and
//! has the same spectrum, so only `⌊n/2⌋ + 1` slices are visited.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{fft_tubes, DenseTensor3, SpectralTensor3};

/// Fourier row slices with norm below this are treated as singular.
pub const SINGULAR_ROW_TOL: f64 = 1e-12;

/// Slack allowed when testing `q ≤ 1 − β`, so that e.g. `q = 0.975`,
/// `β = 0.025` is admissible despite rounding.
const ADMISSIBLE_SLACK: f64 = 1e-12;

/// `(σ_min, σ_max)` of `bcirc(A)`.
pub fn bcirc_singular_extremes(a: &DenseTensor3) -> (f64, f64) {
    singular_extremes_spectral(&fft_tubes(a))
}

pub fn singular_extremes_spectral(ah: &SpectralTensor3) -> (f64, f64) {
    (0..ah.independent_slices())
        .into_par_iter()
        .map(|h| {
            let sv = linalg::singular_values(&ah.slice_matrix(h));
            let hi = sv.first().copied().unwrap_or(0.0);
            let lo = sv.last().copied().unwrap_or(0.0);
            (lo, hi)
        })
        .reduce(
            || (f64::INFINITY, 0.0),
            |(a_lo, a_hi), (b_lo, b_hi)| (a_lo.min(b_lo), a_hi.max(b_hi)),
        )
}

/// `‖â_{i,h}‖₂` for every row `i` and Fourier index `h`, row-major `m × n`.
pub fn fourier_row_norms(ah: &SpectralTensor3) -> Vec<f64> {
    let s = ah.shape();
    let mut out = vec![0.0; s.rows * s.depth];
    for h in 0..s.depth {
        for i in 0..s.rows {
            out[i * s.depth + h] = ah.row(i, h).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        }
    }
    out
}

fn check_row_norms(norms: &[f64], depth: usize, rows: impl IntoIterator<Item = usize>) -> Result<()> {
    for i in rows {
        for h in 0..depth {
            let norm = norms[i * depth + h];
            if !(norm >= SINGULAR_ROW_TOL) {
                return Err(Error::SingularRow { row: i, slice: h, norm });
            }
        }
    }
    Ok(())
}

/// `η = max_i σ_max(bcirc(A_{i::}^†))`, which for a row slice equals
/// `max_{i,h} 1 / ‖â_{i,h}‖₂`.
pub fn eta(a: &DenseTensor3) -> Result<f64> {
    eta_spectral(&fft_tubes(a))
}

pub fn eta_spectral(ah: &SpectralTensor3) -> Result<f64> {
    let s = ah.shape();
    let norms = fourier_row_norms(ah);
    check_row_norms(&norms, s.depth, 0..s.rows)?;
    Ok(norms.iter().map(|v| 1.0 / v).fold(0.0, f64::max))
}

/// Fourier slice `h` of `E[bcirc(P_i)]` over `rows`: the average of the rank-one
/// projectors `â^* â / ‖â‖²`, an `l × l` Hermitian matrix.
pub fn averaged_projector(ah: &SpectralTensor3, rows: &[usize], h: usize) -> DMatrix<Complex64> {
    let l = ah.shape().cols;
    let mut acc = DMatrix::<Complex64>::zeros(l, l);
    for &i in rows {
        let row = ah.row(i, h);
        let nsq: f64 = row.iter().map(|c| c.norm_sqr()).sum();
        for r in 0..l {
            let cr = row[r].conj();
            for c in 0..l {
                acc[(r, c)] += cr * row[c] / nsq;
            }
        }
    }
    acc / Complex64::new(rows.len() as f64, 0.0)
}

/// `σ_min(E[bcirc(P_i)])` with the expectation uniform over `rows`.
pub fn expected_projector_sigma_min(a: &DenseTensor3, rows: &[usize]) -> Result<f64> {
    expected_projector_sigma_min_spectral(&fft_tubes(a), rows)
}

pub fn expected_projector_sigma_min_spectral(ah: &SpectralTensor3, rows: &[usize]) -> Result<f64> {
    let s = ah.shape();
    if rows.is_empty() {
        return Err(Error::domain("expected projector over an empty row set"));
    }
    if let Some(&bad) = rows.iter().find(|&&i| i >= s.rows) {
        return Err(Error::domain(format!("row {bad} out of range for {} rows", s.rows)));
    }
    check_row_norms(&fourier_row_norms(ah), s.depth, rows.iter().copied())?;
    let min = (0..ah.independent_slices())
        .into_par_iter()
        .map(|h| {
            let ev = linalg::hermitian_eigenvalues(&averaged_projector(ah, rows, h));
            // singular values of a Hermitian matrix are |λ|
            ev.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(min)
}

/// Upper bound on the `q`-quantile of `|A ∗ X_k − B|` in terms of the
/// distance to the true solution:
/// `σ_max(bcirc(A)) ‖X_k − X⋆‖_F / √(m p n (1 − β − q))`.
///
/// At `q = 1 − β` the bound is infinite unless `X_k = X⋆`.
pub fn quantile_bound(
    a: &DenseTensor3,
    xk: &DenseTensor3,
    x_star: &DenseTensor3,
    q: f64,
    beta: f64,
) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0 - beta + ADMISSIBLE_SLACK) {
        return Err(Error::domain(format!(
            "quantile bound needs 0 < q <= 1 - beta, got q = {q}, beta = {beta}"
        )));
    }
    let dist = xk.sub(x_star)?.frobenius();
    if dist == 0.0 {
        return Ok(0.0);
    }
    let (_, smax) = bcirc_singular_extremes(a);
    let mpn = (a.rows() * xk.cols() * a.depth()) as f64;
    let radicand = (mpn * (1.0 - beta - q)).max(0.0);
    Ok(smax * dist / radicand.sqrt())
}

/// Everything the rate formulas consume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateInputs {
    pub sigma_max_bcirc: f64,
    pub eta: f64,
    pub sigma_min_expected_projector: f64,
    pub beta: f64,
    pub beta_row: f64,
    pub q: f64,
    pub m: usize,
}

impl RateInputs {
    /// `1 + σ_max(bcirc(A)) η / √(m(1 − β − q))`, the growth factor for a step
    /// that lands on an undetected corrupted row.
    fn corrupted_step_factor(&self) -> Result<f64> {
        let radicand = self.m as f64 * (1.0 - self.beta - self.q);
        if !(radicand > 0.0) {
            return Err(Error::domain(format!(
                "m(1 - beta - q) = {radicand} must be positive (beta = {}, q = {})",
                self.beta, self.q
            )));
        }
        Ok(1.0 + self.sigma_max_bcirc * self.eta / radicand.sqrt())
    }
}

/// The QTRK contraction factor
/// `R = (1 − (1−β_row)/q)(1 + σ_max η/√(m(1−β−q))) + (1 − β_row/q)(1 − σ_min(E[bcirc(P_i)]))`,
/// evaluated as written: no clamping, negative coefficients are kept.
///
/// When the first coefficient is exactly zero (e.g. `β_row = 0`, `q = 1`) its
/// term vanishes without evaluating the square root.
pub fn rate_qtrk(inp: &RateInputs) -> Result<f64> {
    let q = inp.q;
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::domain(format!("q = {q} must lie in (0, 1]")));
    }
    if q > 1.0 - inp.beta + ADMISSIBLE_SLACK {
        return Err(Error::domain(format!(
            "q = {q} exceeds 1 - beta = {}",
            1.0 - inp.beta
        )));
    }
    let corrupted_coef = 1.0 - (1.0 - inp.beta_row) / q;
    let clean_coef = 1.0 - inp.beta_row / q;
    let corrupted_term = if corrupted_coef == 0.0 {
        0.0
    } else {
        corrupted_coef * inp.corrupted_step_factor()?
    };
    Ok(corrupted_term + clean_coef * (1.0 - inp.sigma_min_expected_projector))
}

/// The mQTRK factor
/// `q(1 − R) + (min{1−β, (1−q)pn} + βpn)(1 + σ_max η/√(m(1−β−q)))`,
/// valid under `1 − 1/(pn) < q < 1 − β`.
pub fn rate_mqtrk(inp: &RateInputs, p: usize, n: usize) -> Result<f64> {
    let pn = (p * n) as f64;
    let q = inp.q;
    let lower = 1.0 - 1.0 / pn;
    if !(q > lower) {
        return Err(Error::domain(format!(
            "mQTRK rate needs 1 - 1/(pn) < q, got 1 - 1/{pn} = {lower} >= q = {q}"
        )));
    }
    let upper = 1.0 - inp.beta;
    if !(q < upper) {
        return Err(Error::domain(format!(
            "mQTRK rate needs q < 1 - beta, got q = {q} >= {upper}"
        )));
    }
    let r = rate_qtrk(inp)?;
    let mix = (1.0 - inp.beta).min((1.0 - q) * pn) + inp.beta * pn;
    Ok(q * (1.0 - r) + mix * inp.corrupted_step_factor()?)
}

/// The theoretical constants and rates for one system and quantile level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub sigma_max_bcirc: f64,
    pub eta: f64,
    /// Absent when every row is corrupted.
    pub sigma_min_expected_projector: Option<f64>,
    pub beta: f64,
    pub beta_row: f64,
    pub q: f64,
    pub rate_qtrk: Option<f64>,
    pub rate_mqtrk: Option<f64>,
    pub qtrk_violation: Option<String>,
    pub mqtrk_violation: Option<String>,
    /// `R ≥ 1`: the guarantee says nothing.
    pub bound_vacuous: bool,
}

impl RateReport {
    /// Evaluates every constant on `a`. `clean_rows` is `U⋆`; `p` is the number
    /// of right-hand-side columns. Formula precondition failures are recorded
    /// in the `*_violation` fields rather than returned.
    pub fn compute(
        a: &DenseTensor3,
        clean_rows: &[usize],
        beta: f64,
        beta_row: f64,
        q: f64,
        p: usize,
    ) -> Result<Self> {
        let ah = fft_tubes(a);
        let (_, sigma_max_bcirc) = singular_extremes_spectral(&ah);
        let eta = eta_spectral(&ah)?;
        let sigma_min = if clean_rows.is_empty() {
            None
        } else {
            Some(expected_projector_sigma_min_spectral(&ah, clean_rows)?)
        };
        let mut report = RateReport {
            sigma_max_bcirc,
            eta,
            sigma_min_expected_projector: sigma_min,
            beta,
            beta_row,
            q,
            rate_qtrk: None,
            rate_mqtrk: None,
            qtrk_violation: None,
            mqtrk_violation: None,
            bound_vacuous: false,
        };
        let Some(sigma_min) = sigma_min else {
            let msg = "no uncorrupted row slices; E over U* is undefined".to_string();
            report.qtrk_violation = Some(msg.clone());
            report.mqtrk_violation = Some(msg);
            return Ok(report);
        };
        let inputs = RateInputs {
            sigma_max_bcirc,
            eta,
            sigma_min_expected_projector: sigma_min,
            beta,
            beta_row,
            q,
            m: a.rows(),
        };
        match rate_qtrk(&inputs) {
            Ok(r) => {
                report.rate_qtrk = Some(r);
                report.bound_vacuous = r >= 1.0;
            }
            Err(e) => report.qtrk_violation = Some(e.to_string()),
        }
        match rate_mqtrk(&inputs, p, a.depth()) {
            Ok(r) => report.rate_mqtrk = Some(r),
            Err(e) => report.mqtrk_violation = Some(e.to_string()),
        }
        Ok(report)
    }
}
