use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sncbf_bench::commands;
use sncbf_bench::config::ExperimentConfig;
use sncbf_bench::CmdError;
use sncbf_core::exec::{with_threads, Execution};

#[derive(Parser)]
#[command(name = "sncbf", about = "Train and benchmark sequential neural barrier controllers")]
struct Cli {
    /// Experiment configuration (`key = value` lines); defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Added to every configured seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    /// Worker threads; 0 uses all cores, 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Demonstrations, dynamics fit and two-phase barrier training.
    Train,
    /// Collision-rate sweep over methods, densities and seeds.
    Bench {
        /// Directory holding trained containers.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Prediction-error study of the crowd decomposition.
    Decomp,
    /// Barrier level sets along a recorded trajectory.
    Replay {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Half-width of the grid window around the ego, meters.
        #[arg(long, default_value_t = 6.0)]
        extent: f64,
    },
}

fn run(cli: Cli) -> Result<(), CmdError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg = cfg.with_seed_offset(cli.seed_offset);
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    let exec = if cli.threads == 1 { Execution::Sequential } else { Execution::Parallel };
    let mut log = |s: String| eprintln!("{s}");
    with_threads(cli.threads, move || match cli.command {
        Command::Train => commands::cmd_train(&cfg, exec, &mut log).map(|_| ()),
        Command::Bench { models } => {
            if let Some(m) = models {
                cfg.models_dir = Some(m);
            }
            commands::cmd_bench(&cfg, exec, &mut log).map(|_| ())
        }
        Command::Decomp => commands::cmd_decomp(&cfg, exec, &mut log).map(|_| ()),
        Command::Replay { trajectory, model, extent } => {
            let files = commands::cmd_replay(&cfg, &trajectory, &model, extent, exec)?;
            eprintln!("{} frames written to {}", files.len(), cfg.out_dir.display());
            Ok(())
        }
    })
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
