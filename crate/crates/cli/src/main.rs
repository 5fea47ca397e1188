use std::path::PathBuf;
use std::process::ExitCode;

use cdbench_cli::{cmd_analyze, cmd_gen, cmd_run, cmd_sweep, cmd_teachers, CliResult, Overrides};
use clap::{Args, Parser, Subcommand};

/// Continual distillation benchmark runner.
#[derive(Parser)]
#[command(name = "cdbench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output root; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Exec {
    /// Comma-separated seeds; overrides `run.seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads (default: available cores, capped by CD_BENCH_THREADS).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the scenario: one CSV per domain and a manifest.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the teachers and write a quality report.
    Teachers {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        exec: Exec,
    },
    /// Distill the teacher sequence with every method and seed.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        exec: Exec,
    },
    /// Repeat the run for several external-data ratios.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        exec: Exec,
        /// Comma-separated ratios; overrides `sweep.ed_ratios`.
        #[arg(long, value_delimiter = ',')]
        ratio: Option<Vec<f64>>,
    },
    /// Compute metrics and plot data for a run or sweep directory.
    Analyze {
        /// A run directory (with results.csv) or a sweep directory.
        dir: PathBuf,
    },
}

fn overrides(common: &Common, exec: Option<&Exec>, ratios: Option<Vec<f64>>) -> Overrides {
    Overrides {
        out: common.out.clone(),
        seeds: exec.and_then(|e| e.seeds.clone()),
        jobs: exec.and_then(|e| e.jobs),
        ratios,
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen { common } => {
            let dir = cmd_gen(&common.config, &overrides(&common, None, None))?;
            println!("scenario written to {}", dir.display());
        }
        Command::Teachers { common, exec } => {
            let report = cmd_teachers(&common.config, &overrides(&common, Some(&exec), None))?;
            for q in &report.teachers {
                println!(
                    "seed {} teacher {}: in-domain accuracy {:.4}{}",
                    q.seed,
                    q.teacher,
                    q.min_in_domain,
                    if q.meets_floor { "" } else { " (below floor)" }
                );
            }
        }
        Command::Run { common, exec } => {
            let dir = cmd_run(&common.config, &overrides(&common, Some(&exec), None))?;
            println!("results written to {}", dir.display());
        }
        Command::Sweep { common, exec, ratio } => {
            let dir = cmd_sweep(&common.config, &overrides(&common, Some(&exec), ratio))?;
            println!("sweep written to {}", dir.display());
        }
        Command::Analyze { dir } => {
            let (out, _) = cmd_analyze(&dir)?;
            println!("analysis written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cdbench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
