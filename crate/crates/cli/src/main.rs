use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use tapsense_cli::config::{CliOverrides, RunConfig};
use tapsense_cli::pipeline;
use tapsense_core::eval::Task;
use tapsense_core::exec::with_jobs;

#[derive(Parser)]
#[command(name = "tapsense", version, about = "Acoustic-tactile object sensing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory for runs and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset root; falls back to the config file, then SONIC_DATA_ROOT.
    #[arg(long)]
    data_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Explore meshes with the simulated hand and write a dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Directory of .obj/.ply meshes with per-face material ids.
        #[arg(long)]
        meshes: Option<PathBuf>,
    },
    /// Detect strikes and write mel spectrograms.
    Extract {
        #[command(flatten)]
        common: Common,
    },
    /// Write hand-crafted audio descriptors.
    Features {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model for one task.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<Task>,
        /// Overrides the preset epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a trained model against the baselines.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<Task>,
    },
    /// Refine stored material predictions.
    Refine {
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate evaluation reports over seeds.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common, task: Option<Task>, epochs: Option<usize>, meshes: Option<PathBuf>) -> Result<RunConfig> {
    RunConfig::load(
        common.config.as_deref(),
        &CliOverrides {
            data_root: common.data_root.clone(),
            mesh_dir: meshes,
            out: common.out.clone(),
            seed: common.seed,
            task,
            jobs: common.jobs,
            epochs,
        },
    )
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.command {
        Command::Simulate { common, meshes } => load(common, None, None, meshes.clone())?,
        Command::Train { common, task, epochs } => load(common, *task, *epochs, None)?,
        Command::Eval { common, task } => load(common, *task, None, None)?,
        Command::Extract { common } | Command::Features { common } | Command::Refine { common } | Command::Report { common } => {
            load(common, None, None, None)?
        }
    };
    with_jobs(cfg.jobs, || -> Result<()> {
        match cli.command {
            Command::Simulate { .. } => {
                let s = pipeline::simulate(&cfg)?;
                println!(
                    "simulated {} objects ({} skipped): {} taps, {} recordings in {}",
                    s.objects,
                    s.skipped,
                    s.taps,
                    s.recordings,
                    cfg.data_root.display()
                );
            }
            Command::Extract { .. } => {
                let s = pipeline::extract(&cfg)?;
                println!("{} spectrograms written, {} recordings without a detected strike", s.spectrograms, s.no_strike);
            }
            Command::Features { .. } => {
                println!("{} descriptor rows written", pipeline::features(&cfg)?);
            }
            Command::Train { .. } => {
                let dir = pipeline::train_stage(&cfg)?;
                println!("trained {} model in {}", cfg.task, dir.display());
            }
            Command::Eval { .. } => {
                let r = pipeline::eval_stage(&cfg)?;
                for row in r.rows.iter().filter(|row| !row.metric.contains('/')) {
                    println!("{:<12} {:<16} {:.4}", row.method, row.metric, row.value);
                }
            }
            Command::Refine { .. } => {
                let (before, after) = pipeline::refine_stage(&cfg)?;
                println!("macro F1 before refinement {before:.4}, after {after:.4}");
            }
            Command::Report { .. } => {
                let rows = pipeline::report_stage(&cfg)?;
                if rows.is_empty() {
                    println!("no reports");
                }
                for r in rows.iter().filter(|r| !r.metric.contains('/')) {
                    println!("{:<8} {:<12} {:<16} {:.4} ± {:.4} (n={})", r.task, r.method, r.metric, r.mean, r.sd, r.n);
                }
            }
        }
        Ok(())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
