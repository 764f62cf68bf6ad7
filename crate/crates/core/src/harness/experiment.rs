//! Multi-trial sweeps over corruption levels and solver cells.
//!
//! Trial `t` draws `A`, `X⋆` and `X0` (all i.i.d. standard normal, in that
//! order) from a generator seeded with `master ^ splitmix64(t)`. Every grid
//! point `(β̃, β̃_row)` of the trial gets its own plan, and every cell of a grid
//! point runs on the same `(A, B, X0)` with the same sampling seed, so the
//! curves are comparable and `QTRK:1` reproduces `TRK` exactly.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{Cell, ExperimentConfig};
use super::{lower_median, plan_seed, solver_seed, trial_seed};
use crate::corruption::{generate_plan, CorruptionPlan};
use crate::error::{Error, Result};
use crate::solvers::{solve, RunRecord, SolverConfig, TRACE_CSV_HEADER};
use crate::spectral::RateReport;
use crate::tensor::{tprod, DenseTensor3, Shape3};

/// The random system of one trial.
#[derive(Debug, Clone)]
pub struct TrialSystem {
    pub a: DenseTensor3,
    pub x_star: DenseTensor3,
    pub x0: DenseTensor3,
    pub b_star: DenseTensor3,
}

impl TrialSystem {
    pub fn draw(cfg: &ExperimentConfig, trial: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.seed, trial));
        let a = DenseTensor3::random_normal(cfg.m, cfg.l, cfg.n, &mut rng);
        let x_star = DenseTensor3::random_normal(cfg.l, cfg.p, cfg.n, &mut rng);
        let x0 = DenseTensor3::random_normal(cfg.l, cfg.p, cfg.n, &mut rng);
        let b_star = tprod(&a, &x_star)?;
        Ok(Self {
            a,
            x_star,
            x0,
            b_star,
        })
    }
}

fn trial_plan(cfg: &ExperimentConfig, trial: usize, grid_index: usize, bt: f64, br: f64) -> Result<CorruptionPlan> {
    let seed = plan_seed(trial_seed(cfg.seed, trial), grid_index);
    generate_plan(Shape3::new(cfg.m, cfg.p, cfg.n), bt, br, cfg.law, seed)
}

/// Outcome of one cell over all trials; a failed trial holds its message.
#[derive(Debug, Clone)]
pub struct CellRuns {
    pub cell: Cell,
    pub runs: Vec<std::result::Result<RunRecord, String>>,
    /// Summed solver time over trials.
    pub busy: Duration,
}

#[derive(Debug, Clone)]
pub struct GridRuns {
    pub beta_tilde: f64,
    pub beta_row_tilde: f64,
    /// Per trial; `None` when plan generation itself failed.
    pub plans: Vec<Option<CorruptionPlan>>,
    pub cells: Vec<CellRuns>,
}

/// Medians across successful trials for one cell at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub variant: String,
    pub q: f64,
    pub beta_tilde: f64,
    pub beta_row_tilde: f64,
    pub iters: Vec<usize>,
    pub median_rel_error: Vec<f64>,
    pub median_rel_residual: Vec<f64>,
    pub final_median_rel_error: f64,
    pub final_median_rel_residual: f64,
    /// Stalled iterations over all iterations of successful trials.
    pub stall_rate: f64,
    pub trials_ok: usize,
    pub failures: usize,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub grid: Vec<GridRuns>,
    pub summary: Vec<CellSummary>,
    pub wall_time: Duration,
}

impl ExperimentResult {
    pub fn find(&self, variant: &str, q: f64, beta_tilde: f64, beta_row_tilde: f64) -> Option<&CellSummary> {
        self.summary.iter().find(|s| {
            s.variant == variant && s.q == q && s.beta_tilde == beta_tilde && s.beta_row_tilde == beta_row_tilde
        })
    }
}

type TrialOutput = Vec<(Option<CorruptionPlan>, Vec<(std::result::Result<RunRecord, String>, Duration)>)>;

fn run_trial(cfg: &ExperimentConfig, trial: usize) -> TrialOutput {
    let grid = cfg.grid();
    let sys = TrialSystem::draw(cfg, trial);
    grid.iter()
        .enumerate()
        .map(|(g, &(bt, br))| {
            let setup = sys.as_ref().map_err(|e| e.to_string()).and_then(|sys| {
                let plan = trial_plan(cfg, trial, g, bt, br).map_err(|e| e.to_string())?;
                let b = plan.apply(&sys.b_star).map_err(|e| e.to_string())?;
                Ok((sys, plan, b))
            });
            match setup {
                Err(msg) => (None, cfg.cells.iter().map(|_| (Err(msg.clone()), Duration::ZERO)).collect()),
                Ok((sys, plan, b)) => {
                    let runs = cfg
                        .cells
                        .iter()
                        .map(|cell| {
                            let solver = SolverConfig {
                                variant: cell.variant,
                                q: cell.q,
                                max_iters: cfg.iters,
                                seed: solver_seed(trial_seed(cfg.seed, trial)),
                                record_every: cfg.record_every,
                            };
                            let start = Instant::now();
                            let out = solve(&sys.a, &b, &solver, Some(&sys.x_star), &sys.x0)
                                .map(|(_, rec)| rec)
                                .map_err(|e| e.to_string());
                            (out, start.elapsed())
                        })
                        .collect();
                    (Some(plan), runs)
                }
            }
        })
        .collect()
}

fn summarize(cell: &CellRuns, bt: f64, br: f64, iters: usize) -> CellSummary {
    let ok: Vec<&RunRecord> = cell.runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    let points: Vec<usize> = ok.first().map(|r| r.trace.iter().map(|p| p.iter).collect()).unwrap_or_default();
    let median_of = |f: &dyn Fn(&RunRecord) -> f64| {
        let vals: Vec<f64> = ok.iter().map(|r| f(r)).collect();
        lower_median(&vals).unwrap_or(f64::NAN)
    };
    let mut median_rel_error = Vec::with_capacity(points.len());
    let mut median_rel_residual = Vec::with_capacity(points.len());
    for k in 0..points.len() {
        median_rel_error.push(median_of(&|r| r.trace[k].rel_error.unwrap_or(f64::NAN)));
        median_rel_residual.push(median_of(&|r| r.trace[k].rel_residual));
    }
    let stalls: u64 = ok.iter().map(|r| r.stall_iterations).sum();
    CellSummary {
        variant: cell.cell.variant.to_string(),
        q: cell.cell.q,
        beta_tilde: bt,
        beta_row_tilde: br,
        final_median_rel_error: median_rel_error.last().copied().unwrap_or(f64::NAN),
        final_median_rel_residual: median_rel_residual.last().copied().unwrap_or(f64::NAN),
        stall_rate: if ok.is_empty() {
            f64::NAN
        } else {
            stalls as f64 / (ok.len() * iters) as f64
        },
        iters: points,
        median_rel_error,
        median_rel_residual,
        trials_ok: ok.len(),
        failures: cell.runs.len() - ok.len(),
        wall_time: cell.busy,
    }
}

/// Runs every trial (in parallel) and aggregates, without touching the disk.
pub fn run_experiment_in_memory(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let trials: Vec<TrialOutput> = (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, t)).collect();
    let mut grid: Vec<GridRuns> = cfg
        .grid()
        .into_iter()
        .map(|(bt, br)| GridRuns {
            beta_tilde: bt,
            beta_row_tilde: br,
            plans: Vec::with_capacity(cfg.trials),
            cells: cfg
                .cells
                .iter()
                .map(|&cell| CellRuns {
                    cell,
                    runs: Vec::with_capacity(cfg.trials),
                    busy: Duration::ZERO,
                })
                .collect(),
        })
        .collect();
    for trial in trials {
        for (g, (plan, runs)) in trial.into_iter().enumerate() {
            grid[g].plans.push(plan);
            for (c, (run, took)) in runs.into_iter().enumerate() {
                grid[g].cells[c].runs.push(run);
                grid[g].cells[c].busy += took;
            }
        }
    }
    let summary = grid
        .iter()
        .flat_map(|g| {
            g.cells
                .iter()
                .map(|c| summarize(c, g.beta_tilde, g.beta_row_tilde, cfg.iters))
        })
        .collect();
    Ok(ExperimentResult {
        grid,
        summary,
        wall_time: start.elapsed(),
    })
}

/// File name of a cell's trace CSV.
pub fn trace_file_name(cell: &Cell, bt: f64, br: f64) -> String {
    format!("trace_{}_bt{bt}_br{br}.csv", cell.label())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Writes traces, plan hashes, summaries and timing under `cfg.output_dir`.
///
/// Everything except `timing.txt` is a pure function of the config.
pub fn write_experiment(cfg: &ExperimentConfig, res: &ExperimentResult) -> Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    for g in &res.grid {
        for c in &g.cells {
            let path = dir.join(trace_file_name(&c.cell, g.beta_tilde, g.beta_row_tilde));
            let mut w = create(&path)?;
            writeln!(w, "{TRACE_CSV_HEADER}").map_err(io_at(&path))?;
            for (t, run) in c.runs.iter().enumerate() {
                if let Ok(rec) = run {
                    rec.write_csv_rows(t, &mut w).map_err(io_at(&path))?;
                }
            }
            w.flush().map_err(io_at(&path))?;
        }
    }

    let path = dir.join("plans.csv");
    let mut w = create(&path)?;
    writeln!(w, "trial,beta_tilde,beta_row_tilde,plan_hash,corruptions,beta,beta_row").map_err(io_at(&path))?;
    for g in &res.grid {
        for (t, plan) in g.plans.iter().enumerate() {
            if let Some(plan) = plan {
                writeln!(
                    w,
                    "{t},{},{},{},{},{},{}",
                    g.beta_tilde,
                    g.beta_row_tilde,
                    plan.hash(),
                    plan.len(),
                    plan.beta(),
                    plan.beta_row()
                )
                .map_err(io_at(&path))?;
            }
        }
    }
    w.flush().map_err(io_at(&path))?;

    let path = dir.join("summary.csv");
    let mut w = create(&path)?;
    writeln!(w, "variant,q,beta_tilde,beta_row_tilde,iter,median_rel_error,median_rel_residual,trials_ok")
        .map_err(io_at(&path))?;
    for s in &res.summary {
        for (k, it) in s.iters.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{it},{},{},{}",
                s.variant, s.q, s.beta_tilde, s.beta_row_tilde, s.median_rel_error[k], s.median_rel_residual[k], s.trials_ok
            )
            .map_err(io_at(&path))?;
        }
    }
    w.flush().map_err(io_at(&path))?;

    let path = dir.join("final.csv");
    let mut w = create(&path)?;
    writeln!(
        w,
        "variant,q,beta_tilde,beta_row_tilde,final_median_rel_error,final_median_rel_residual,stall_rate,trials_ok,failures"
    )
    .map_err(io_at(&path))?;
    for s in &res.summary {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            s.variant,
            s.q,
            s.beta_tilde,
            s.beta_row_tilde,
            s.final_median_rel_error,
            s.final_median_rel_residual,
            s.stall_rate,
            s.trials_ok,
            s.failures
        )
        .map_err(io_at(&path))?;
    }
    w.flush().map_err(io_at(&path))?;

    let path = dir.join("failures.csv");
    let mut w = create(&path)?;
    writeln!(w, "variant,q,beta_tilde,beta_row_tilde,trial,error").map_err(io_at(&path))?;
    for g in &res.grid {
        for c in &g.cells {
            for (t, run) in c.runs.iter().enumerate() {
                if let Err(msg) = run {
                    let msg = msg.replace(['"', '\n'], " ");
                    writeln!(
                        w,
                        "{},{},{},{},{t},\"{msg}\"",
                        c.cell.variant, c.cell.q, g.beta_tilde, g.beta_row_tilde
                    )
                    .map_err(io_at(&path))?;
                }
            }
        }
    }
    w.flush().map_err(io_at(&path))?;

    let path = dir.join("timing.txt");
    let mut w = create(&path)?;
    writeln!(w, "total_wall_seconds {:.3}", res.wall_time.as_secs_f64()).map_err(io_at(&path))?;
    for s in &res.summary {
        writeln!(
            w,
            "{} q={} beta_tilde={} beta_row_tilde={} solver_seconds {:.3}",
            s.variant,
            s.q,
            s.beta_tilde,
            s.beta_row_tilde,
            s.wall_time.as_secs_f64()
        )
        .map_err(io_at(&path))?;
    }
    w.flush().map_err(io_at(&path))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let res = run_experiment_in_memory(cfg)?;
    write_experiment(cfg, &res)?;
    Ok(res)
}

/// One entry of the `rates` output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEntry {
    pub variant: String,
    pub beta_tilde: f64,
    pub beta_row_tilde: f64,
    pub plan_hash: String,
    #[serde(flatten)]
    pub report: RateReport,
}

/// Rate reports for every grid point and cell, evaluated on trial 0's system
/// and plan with the plan's realized `β` and `β_row`.
pub fn rates(cfg: &ExperimentConfig) -> Result<Vec<RateEntry>> {
    cfg.validate()?;
    let sys = TrialSystem::draw(cfg, 0)?;
    let mut out = Vec::new();
    for (g, (bt, br)) in cfg.grid().into_iter().enumerate() {
        let plan = trial_plan(cfg, 0, g, bt, br)?;
        for cell in &cfg.cells {
            let report = RateReport::compute(&sys.a, &plan.clean_rows(), plan.beta(), plan.beta_row(), cell.q, cfg.p)?;
            out.push(RateEntry {
                variant: cell.variant.to_string(),
                beta_tilde: bt,
                beta_row_tilde: br,
                plan_hash: plan.hash(),
                report,
            });
        }
    }
    Ok(out)
}

/// Writes `rates.json` under the output directory and returns its text.
pub fn write_rates(cfg: &ExperimentConfig, entries: &[RateEntry]) -> Result<String> {
    let json = serde_json::to_string_pretty(entries).map_err(|e| Error::Format(e.to_string()))?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let path = cfg.output_dir.join("rates.json");
    fs::write(&path, format!("{json}\n")).map_err(|e| Error::io(&path, e))?;
    Ok(json)
}
