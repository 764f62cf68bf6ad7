//! Configuration-driven commands behind the `qtrk` binary.
//!
//! Seeds are split deterministically: trial `t` uses `master ^ splitmix64(t)`;
//! the plan of grid point `g` and the solver's sampling stream are derived
//! from the trial seed with further [`splitmix64`] mixing.

pub mod config;
mod deblur_cmd;
mod experiment;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::io::save_t3b;
use crate::tensor::{DenseTensor3, Shape3};

pub use config::{Cell, DeblurConfig, ExperimentConfig, KeyValues};
pub use deblur_cmd::{deblur_command, deblur_plan, load_video, run_deblur_config, DeblurReport};
pub use experiment::{
    rates, run_experiment, run_experiment_in_memory, trace_file_name, write_experiment, write_rates,
    CellRuns, CellSummary, ExperimentResult, GridRuns, RateEntry, TrialSystem,
};

/// The SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    master ^ splitmix64(trial as u64)
}

pub fn plan_seed(trial_seed: u64, grid_index: usize) -> u64 {
    splitmix64(trial_seed ^ splitmix64(0x706C_616E ^ grid_index as u64))
}

pub fn solver_seed(trial_seed: u64) -> u64 {
    splitmix64(trial_seed ^ 0x736F_6C76_6572)
}

/// The `⌈k/2⌉`-th smallest of `k` values (the lower median for even `k`).
/// NaN sorts last. `None` for an empty slice.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Parses `MxLxN`.
pub fn parse_shape(s: &str) -> Result<Shape3> {
    let dims: Vec<usize> = s
        .split(['x', 'X'])
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::config(format!("shape '{s}' is not MxLxN")))?;
    match dims[..] {
        [m, l, n] if m > 0 && l > 0 && n > 0 => Ok(Shape3::new(m, l, n)),
        _ => Err(Error::config(format!("shape '{s}' needs three positive dimensions"))),
    }
}

/// A standard-normal tensor of the given shape, seeded.
pub fn gen_tensor(shape: Shape3, seed: u64) -> DenseTensor3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseTensor3::random_normal(shape.rows, shape.cols, shape.depth, &mut rng)
}

pub fn gen_tensor_command(shape: &str, seed: u64, out: &Path) -> Result<DenseTensor3> {
    let t = gen_tensor(parse_shape(shape)?, seed);
    save_t3b(&t, out)?;
    Ok(t)
}
