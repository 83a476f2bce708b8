//! Command-line driver for polytherm: configuration, runs, checks and refinement studies.

pub mod commands;
pub mod config;
pub mod suite;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{CliError, Status};
use config::{parse_config, RunConfig};
use polytherm_core::HeatSupply;

#[derive(Debug, Parser)]
#[command(
    name = "polytherm",
    version,
    about = "Variational thermoelasticity on periodic grids"
)]
pub struct Cli {
    /// Worker threads for the field kernels (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 2024)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// March the configured problem and certify the result.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite. With a config, its model is checked instead of the default.
    Check {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// h-refinement and optional dx-refinement study.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit ledgers and certificates from a checkpoint.
    EnergyReport {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config of the original run; supplies heat and kappa. Zero heat if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn load(path: &PathBuf, out: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let mut cfg = parse_config(path)?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<Status, CliError> {
    match cli.command {
        Command::Run { config, out } => commands::cmd_run(&load(&config, out)?),
        Command::Check { config } => {
            let model = match config {
                Some(p) => parse_config(&p)?.model,
                None => Default::default(),
            };
            Ok(commands::cmd_check(model.model(), cli.seed))
        }
        Command::Study { config, out } => commands::cmd_study(&load(&config, out)?),
        Command::EnergyReport {
            checkpoint,
            config,
            out,
        } => {
            let (heat, kappa) = match config {
                Some(p) => {
                    let c = parse_config(&p)?;
                    (c.heat, c.kappa)
                }
                None => (HeatSupply::Zero, polytherm_core::diagnostics::DEFAULT_KAPPA),
            };
            commands::cmd_energy_report(&checkpoint, heat, kappa, &out)
        }
    }
}

/// Runs one command and returns the process exit code:
/// 0 pass, 1 certificate failure, 2 run failure, 3 configuration or usage error.
pub fn execute(cli: Cli) -> u8 {
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return 3;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} workers: {e}");
            return 3;
        }
    }
    match dispatch(cli) {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
