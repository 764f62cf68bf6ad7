//! Tensor randomized Kaczmarz (TRK) and its quantile-filtered variants.
//!
//! Every variant projects the iterate onto the solution space of one row
//! slice per iteration; they differ in which rows (and, for the masked
//! variant, which columns) they trust:
//!
//! * **TRK** samples a row uniformly from `[m]` and projects fully.
//! * **QTRK** computes `E = A ∗ X − B` and `Q = Q_q(|E|)`, discards every row
//!   slice holding an entry with `|E_ijh| > Q`, and samples uniformly from the
//!   rest. If nothing is left the iteration is a counted no-op (a stall).
//! * **mQTRK** samples any row, then updates only the column slices of `X`
//!   that have no flagged entry in that row.
//!
//! The residual and quantile are recomputed from scratch every iteration.

mod kernel;
mod least_norm;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::fourier::TubeFft;
use crate::tensor::{relative_error, DenseTensor3, SpectralTensor3};

pub use kernel::{project_row, project_row_masked, q_quantile, quantile_rank, residual};
pub use least_norm::{least_norm_solve, LEAST_NORM_RCOND};

/// Header line of the per-iteration trace CSV.
pub const TRACE_CSV_HEADER: &str = "trial,iter,rel_error,rel_residual,stalls_so_far";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Trk,
    Qtrk,
    Mqtrk,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Trk => "TRK",
            Variant::Qtrk => "QTRK",
            Variant::Mqtrk => "MQTRK",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TRK" => Ok(Variant::Trk),
            "QTRK" => Ok(Variant::Qtrk),
            "MQTRK" => Ok(Variant::Mqtrk),
            other => Err(Error::config(format!("unknown solver variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub variant: Variant,
    /// Quantile level in `(0, 1]`; ignored by TRK.
    pub q: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Trace every `record_every` iterations (plus the first and last).
    pub record_every: usize,
}

impl SolverConfig {
    pub fn new(variant: Variant, q: f64, max_iters: usize, seed: u64) -> Self {
        Self {
            variant,
            q,
            max_iters,
            seed,
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::config(format!("q = {} must lie in (0, 1]", self.q)));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every must be at least 1"));
        }
        Ok(())
    }
}

/// One traced iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iter: usize,
    /// `‖X⋆ − X‖_F / ‖X⋆‖_F`, when the true solution is known.
    pub rel_error: Option<f64>,
    /// `‖A ∗ X − R‖_F / ‖R‖_F` against the reference right-hand side `R`
    /// (absolute when `‖R‖_F = 0`).
    pub rel_residual: f64,
    pub stalls_so_far: u64,
}

/// Trace and event counters of one solver run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub trace: Vec<TracePoint>,
    pub iterations: usize,
    /// Updates performed with each row slice.
    pub rows_sampled: Vec<u64>,
    /// QTRK iterations in which every row was flagged.
    pub stall_iterations: u64,
    /// mQTRK: how often each column slice was masked out of an update.
    pub masked_column_counts: Vec<u64>,
    /// Iterations in which each row held at least one flagged residual entry.
    pub flagged_row_counts: Vec<u64>,
}

impl RunRecord {
    fn new(m: usize, p: usize) -> Self {
        Self {
            rows_sampled: vec![0; m],
            masked_column_counts: vec![0; p],
            flagged_row_counts: vec![0; m],
            ..Default::default()
        }
    }

    pub fn final_point(&self) -> Option<&TracePoint> {
        self.trace.last()
    }

    /// Trace rows in the `trial,iter,rel_error,rel_residual,stalls_so_far`
    /// layout, without the header. A missing relative error is an empty field.
    pub fn write_csv_rows<W: Write>(&self, trial: usize, w: &mut W) -> std::io::Result<()> {
        for pt in &self.trace {
            let err = pt.rel_error.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{trial},{},{err},{},{}",
                pt.iter, pt.rel_residual, pt.stalls_so_far
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self, trial: usize) -> String {
        let mut buf = Vec::new();
        writeln!(buf, "{TRACE_CSV_HEADER}").unwrap();
        self.write_csv_rows(trial, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }
}

/// What a single iteration did.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepEvent {
    /// Row used for the update; `None` for a stall or a fully masked row.
    pub row: Option<usize>,
    /// The sampled row, for mQTRK even when every column was masked.
    pub sampled_row: Option<usize>,
    pub stalled: bool,
    pub quantile: Option<f64>,
    pub flagged_rows: Vec<usize>,
    pub masked_columns: Vec<usize>,
}

/// Mutable part of a run: the iterate and the sampling stream.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: DenseTensor3,
    pub iteration: usize,
    rng: ChaCha8Rng,
}

impl SolverState {
    pub fn x(&self) -> &DenseTensor3 {
        &self.x
    }
}

/// A system `A ∗ X = B` prepared for iteration: the spectra of `A` and `B`
/// are computed once and shared by every step.
pub struct Solver<'a> {
    b: &'a DenseTensor3,
    ah: SpectralTensor3,
    bh: SpectralTensor3,
    fft: TubeFft,
    config: SolverConfig,
}

impl<'a> Solver<'a> {
    pub fn new(a: &DenseTensor3, b: &'a DenseTensor3, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        if a.rows() != b.rows() || a.depth() != b.depth() {
            return Err(Error::shape(format!(
                "A {} and B {} do not share rows and depth",
                a.shape(),
                b.shape()
            )));
        }
        let fft = TubeFft::new(a.depth());
        Ok(Self {
            b,
            ah: fft.forward(a),
            bh: fft.forward(b),
            fft,
            config,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn a_spectral(&self) -> &SpectralTensor3 {
        &self.ah
    }

    fn m(&self) -> usize {
        self.ah.shape().rows
    }

    pub fn init_state(&self, x0: &DenseTensor3) -> Result<SolverState> {
        let a = self.ah.shape();
        kernel::check_system_shapes(a, x0.shape(), self.b.shape())?;
        Ok(SolverState {
            x: x0.clone(),
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(self.config.seed),
        })
    }

    /// `A ∗ X − rhs` through the cached spectrum of `A`.
    pub fn residual_against(&self, x: &DenseTensor3, rhs: &DenseTensor3) -> Result<DenseTensor3> {
        self.fft.inverse(&self.ah.matmul(&self.fft.forward(x))?)?.sub(rhs)
    }

    fn residual_spectral(&self, xh: &SpectralTensor3) -> Result<DenseTensor3> {
        self.fft.inverse(&self.ah.matmul(xh)?)?.sub(self.b)
    }

    /// Runs one iteration of the configured variant.
    pub fn step(&self, state: &mut SolverState) -> Result<StepEvent> {
        match self.config.variant {
            Variant::Trk => self.trk_step(state),
            Variant::Qtrk => self.qtrk_step(state),
            Variant::Mqtrk => self.mqtrk_step(state),
        }
    }

    fn project(&self, state: &mut SolverState, xh: &SpectralTensor3, row: usize, keep: &[bool]) -> Result<()> {
        kernel::apply_row_projection(&mut state.x, xh, &self.ah, &self.bh, row, keep, &self.fft)
    }

    pub fn trk_step(&self, state: &mut SolverState) -> Result<StepEvent> {
        let row = state.rng.random_range(0..self.m());
        let xh = self.fft.forward(&state.x);
        let keep = vec![true; state.x.cols()];
        self.project(state, &xh, row, &keep)?;
        state.iteration += 1;
        Ok(StepEvent {
            row: Some(row),
            sampled_row: Some(row),
            ..Default::default()
        })
    }

    /// Residual, quantile and the per-row flagged column sets.
    fn flag(&self, xh: &SpectralTensor3) -> Result<(f64, Vec<Vec<usize>>)> {
        let e = self.residual_spectral(xh)?;
        let q = q_quantile(&e, self.config.q)?;
        let s = e.shape();
        let flagged = (0..s.rows)
            .map(|i| {
                (0..s.cols)
                    .filter(|&j| e.tube(i, j).iter().any(|v| v.abs() > q))
                    .collect()
            })
            .collect();
        Ok((q, flagged))
    }

    pub fn qtrk_step(&self, state: &mut SolverState) -> Result<StepEvent> {
        let xh = self.fft.forward(&state.x);
        let (quantile, flagged) = self.flag(&xh)?;
        let flagged_rows: Vec<usize> = (0..self.m()).filter(|&i| !flagged[i].is_empty()).collect();
        let trusted: Vec<usize> = (0..self.m()).filter(|&i| flagged[i].is_empty()).collect();
        state.iteration += 1;
        let mut ev = StepEvent {
            quantile: Some(quantile),
            flagged_rows,
            ..Default::default()
        };
        if trusted.is_empty() {
            ev.stalled = true;
            return Ok(ev);
        }
        let row = trusted[state.rng.random_range(0..trusted.len())];
        let keep = vec![true; state.x.cols()];
        self.project(state, &xh, row, &keep)?;
        ev.row = Some(row);
        ev.sampled_row = Some(row);
        Ok(ev)
    }

    pub fn mqtrk_step(&self, state: &mut SolverState) -> Result<StepEvent> {
        let xh = self.fft.forward(&state.x);
        let (quantile, flagged) = self.flag(&xh)?;
        let row = state.rng.random_range(0..self.m());
        let p = state.x.cols();
        let mut keep = vec![true; p];
        for &j in &flagged[row] {
            keep[j] = false;
        }
        let any_kept = keep.iter().any(|&k| k);
        if any_kept {
            self.project(state, &xh, row, &keep)?;
        }
        state.iteration += 1;
        Ok(StepEvent {
            row: any_kept.then_some(row),
            sampled_row: Some(row),
            stalled: false,
            quantile: Some(quantile),
            flagged_rows: (0..self.m()).filter(|&i| !flagged[i].is_empty()).collect(),
            masked_columns: flagged[row].clone(),
        })
    }

    fn trace_point(
        &self,
        state: &SolverState,
        x_star: Option<&DenseTensor3>,
        reference: &DenseTensor3,
        ref_norm: f64,
        stalls: u64,
    ) -> Result<TracePoint> {
        let res = self.residual_against(&state.x, reference)?.frobenius();
        Ok(TracePoint {
            iter: state.iteration,
            rel_error: x_star.map(|xs| relative_error(&state.x, xs)).transpose()?,
            rel_residual: if ref_norm > 0.0 { res / ref_norm } else { res },
            stalls_so_far: stalls,
        })
    }

    /// Runs `max_iters` iterations from `x0`. The trace's relative residual is
    /// measured against `reference` (usually `B` itself).
    pub fn run(
        &self,
        x0: &DenseTensor3,
        x_star: Option<&DenseTensor3>,
        reference: &DenseTensor3,
    ) -> Result<(DenseTensor3, RunRecord)> {
        if reference.shape() != self.b.shape() {
            return Err(Error::shape(format!(
                "reference right-hand side {} does not match B {}",
                reference.shape(),
                self.b.shape()
            )));
        }
        if let Some(xs) = x_star {
            if xs.shape() != x0.shape() {
                return Err(Error::shape(format!(
                    "X* {} does not match X0 {}",
                    xs.shape(),
                    x0.shape()
                )));
            }
        }
        let mut state = self.init_state(x0)?;
        let mut record = RunRecord::new(self.m(), x0.cols());
        let ref_norm = reference.frobenius();
        record.trace.push(self.trace_point(&state, x_star, reference, ref_norm, 0)?);
        for k in 1..=self.config.max_iters {
            let ev = self.step(&mut state)?;
            if let Some(r) = ev.row {
                record.rows_sampled[r] += 1;
            }
            if ev.stalled {
                record.stall_iterations += 1;
            }
            for &i in &ev.flagged_rows {
                record.flagged_row_counts[i] += 1;
            }
            for &j in &ev.masked_columns {
                record.masked_column_counts[j] += 1;
            }
            if k % self.config.record_every == 0 || k == self.config.max_iters {
                record.trace.push(self.trace_point(
                    &state,
                    x_star,
                    reference,
                    ref_norm,
                    record.stall_iterations,
                )?);
            }
        }
        record.iterations = state.iteration;
        Ok((state.x, record))
    }
}

/// Runs the configured variant for `config.max_iters` iterations from `x0`.
pub fn solve(
    a: &DenseTensor3,
    b: &DenseTensor3,
    config: &SolverConfig,
    x_star: Option<&DenseTensor3>,
    x0: &DenseTensor3,
) -> Result<(DenseTensor3, RunRecord)> {
    Solver::new(a, b, config.clone())?.run(x0, x_star, b)
}

/// As [`solve`], but the traced residual is measured against `reference`
/// instead of the (possibly corrupted) `b`.
pub fn solve_with_reference(
    a: &DenseTensor3,
    b: &DenseTensor3,
    config: &SolverConfig,
    x_star: Option<&DenseTensor3>,
    x0: &DenseTensor3,
    reference: &DenseTensor3,
) -> Result<(DenseTensor3, RunRecord)> {
    Solver::new(a, b, config.clone())?.run(x0, x_star, reference)
}
