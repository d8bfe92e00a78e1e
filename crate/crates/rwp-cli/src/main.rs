use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rwp_cli::commands::{cmd_bench, cmd_corrupt_eval, cmd_probe, cmd_train, ProbeName};
use rwp_cli::config::{load_config, ExperimentConfig};
use rwp_cli::error::CliError;

#[derive(Parser)]
#[command(
    name = "rwp",
    version,
    about = "Train small networks under random or worst-case weight perturbation and probe the resulting loss landscapes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics.csv, timing.csv, resolved.cfg, final.ckpt.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the [output] dir from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reseed init / batch / noise streams as s, s+1, s+2.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Probe a checkpoint; writes slice.csv, filternorms.csv, radius.csv.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run one probe instead of all enabled ones.
        #[arg(long)]
        probe: Option<ProbeName>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Benchmark per-rule step times under both executor modes; writes bench.csv.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Timed steps per rule and mode (min 10; 3 warmup steps extra).
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Evaluate a checkpoint on corrupted test data; writes corrupt.csv.
    CorruptEval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
}

fn load(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = load_config(config)?;
    if let Some(dir) = out {
        cfg.out_dir = dir;
    }
    if let Some(s) = seed {
        cfg.apply_seed_override(s);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            out,
            seed_override,
        } => cmd_train(&load(&config, out, seed_override)?),
        Command::Probe {
            config,
            checkpoint,
            probe,
            out,
            seed_override,
        } => cmd_probe(&load(&config, out, seed_override)?, &checkpoint, probe),
        Command::Bench {
            config,
            iterations,
            out,
            seed_override,
        } => cmd_bench(&load(&config, out, seed_override)?, iterations),
        Command::CorruptEval {
            config,
            checkpoint,
            out,
            seed_override,
        } => cmd_corrupt_eval(&load(&config, out, seed_override)?, &checkpoint),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
