use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qtrk::harness::{self, DeblurConfig, ExperimentConfig};
use qtrk::Result;

/// Robust tensor Kaczmarz experiments.
#[derive(Debug, Parser)]
#[command(name = "qtrk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a multi-trial sweep and write trace and summary CSVs.
    Experiment { config: PathBuf },
    /// Print rate reports (JSON) for every cell of an experiment config.
    Rates { config: PathBuf },
    /// Deblur a video with the configured solvers.
    Deblur { config: PathBuf },
    /// Write a seeded standard-normal tensor in T3B format.
    GenTensor {
        /// MxLxN
        shape: String,
        seed: u64,
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Experiment { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let res = harness::run_experiment(&cfg)?;
            println!("variant,q,beta_tilde,beta_row_tilde,final_median_rel_error,stall_rate,failures");
            for s in &res.summary {
                println!(
                    "{},{},{},{},{:.3e},{},{}",
                    s.variant, s.q, s.beta_tilde, s.beta_row_tilde, s.final_median_rel_error, s.stall_rate, s.failures
                );
            }
            eprintln!("wrote {} in {:.2?}", cfg.output_dir.display(), res.wall_time);
        }
        Command::Rates { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let entries = harness::rates(&cfg)?;
            println!("{}", harness::write_rates(&cfg, &entries)?);
        }
        Command::Deblur { config } => {
            let cfg = DeblurConfig::load(&config)?;
            let report = harness::deblur_command(&cfg)?;
            print!("{}", report.summary_csv());
            eprintln!("wrote {}", cfg.output_dir.display());
        }
        Command::GenTensor { shape, seed, out } => {
            let t = harness::gen_tensor_command(&shape, seed, &out)?;
            eprintln!("wrote {} tensor to {}", t.shape(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
