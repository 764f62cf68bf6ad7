use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::{Cell, DeblurConfig};
use super::{plan_seed, solver_seed};
use crate::corruption::{generate_plan, CorruptionPlan};
use crate::deblur::{center_shift, run_deblur, save_frames, synthetic_video, BlurSpec, DeblurOutcome, VideoFrames};
use crate::error::{Error, Result};
use crate::solvers::SolverConfig;
use crate::tensor::io::load_t3b;
use crate::tensor::Shape3;

/// Per-cell results of a deblurring run.
#[derive(Debug, Clone)]
pub struct DeblurReport {
    pub plan: CorruptionPlan,
    pub outcomes: Vec<(Cell, DeblurOutcome)>,
}

impl DeblurReport {
    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "variant,q,final_rel_residual,final_rel_error,baseline_rel_residual,psnr_recovered,psnr_baseline,stalls\n",
        );
        for (cell, o) in &self.outcomes {
            let last = o.record.final_point();
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                cell.variant,
                cell.q,
                last.map_or(f64::NAN, |p| p.rel_residual),
                last.and_then(|p| p.rel_error).map_or(f64::NAN, |v| v),
                o.baseline_rel_residual,
                o.psnr_recovered,
                o.psnr_baseline,
                o.record.stall_iterations
            ));
        }
        s
    }
}

pub fn load_video(cfg: &DeblurConfig) -> Result<VideoFrames> {
    match (&cfg.frames_dir, &cfg.frames_t3b) {
        (Some(dir), _) => VideoFrames::load_dir(dir),
        (_, Some(path)) => Ok(VideoFrames::from_tensor(&load_t3b(path)?)),
        _ => Ok(VideoFrames::from_tensor(&synthetic_video(cfg.height, cfg.width, cfg.frames))),
    }
}

/// The corruption plan on the `p × n × l` system right-hand side.
pub fn deblur_plan(cfg: &DeblurConfig, video: &VideoFrames) -> Result<CorruptionPlan> {
    let (l, p, n) = (video.height(), video.width(), video.frame_count());
    let shape = Shape3::new(p, n, l);
    if cfg.corrupted_rows > p {
        return Err(Error::config(format!(
            "corrupted_rows = {} exceeds the {p} system rows (frame width)",
            cfg.corrupted_rows
        )));
    }
    let beta_tilde = cfg.corruptions as f64 / shape.len() as f64;
    let beta_row_tilde = cfg.corrupted_rows as f64 / p as f64;
    generate_plan(shape, beta_tilde, beta_row_tilde, cfg.law, plan_seed(cfg.seed, 0))
}

/// Solves every configured cell on one blurred, corrupted video.
pub fn run_deblur_config(cfg: &DeblurConfig, video: &VideoFrames) -> Result<DeblurReport> {
    let blur = BlurSpec::gaussian(cfg.kernel_size, cfg.kernel_sigma)?;
    let plan = deblur_plan(cfg, video)?;
    let outcomes = cfg
        .cells
        .iter()
        .map(|&cell| {
            let solver = SolverConfig {
                variant: cell.variant,
                q: cell.q,
                max_iters: cfg.iters,
                seed: solver_seed(cfg.seed),
                record_every: cfg.record_every,
            };
            run_deblur(video, &blur, &plan, &solver, cfg.init).map(|o| (cell, o))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeblurReport { plan, outcomes })
}

/// Runs the deblurring command and writes frames, traces, the plan and a
/// summary under `cfg.output_dir`.
pub fn deblur_command(cfg: &DeblurConfig) -> Result<DeblurReport> {
    let video = load_video(cfg)?;
    let report = run_deblur_config(cfg, &video)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blur = BlurSpec::gaussian(cfg.kernel_size, cfg.kernel_sigma)?;

    save_frames(video.tensor(), &dir.join("original"), "frame")?;
    if let Some((_, first)) = report.outcomes.first() {
        save_frames(&center_shift(&first.observed, &blur), &dir.join("observed"), "frame")?;
        save_frames(&first.baseline, &dir.join("baseline"), "frame")?;
    }
    for (cell, o) in &report.outcomes {
        save_frames(&o.recovered, &dir.join(cell.label()), "frame")?;
        write_text(&dir.join(format!("trace_{}.csv", cell.label())), &o.record.to_csv(0))?;
    }
    write_text(&dir.join("plan.json"), &format!("{}\n", report.plan.to_json()))?;
    write_text(&dir.join("deblur_summary.csv"), &report.summary_csv())?;
    Ok(report)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
