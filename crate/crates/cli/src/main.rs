//! `uavnet`: plan a UAV relay flight over a highway scenario, sweep its
//! parameters, or re-verify a finished output directory.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{cmd_solve, cmd_sweep, cmd_validate, exit_code, SolveArgs, SweepArgs};
use uavnet_core::driver::Mode;
use uavnet_core::experiments::SweepParameter;

#[derive(Parser)]
#[command(
    name = "uavnet",
    version,
    about = "Joint UAV trajectory and per-vehicle bandwidth planning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario in one mode and write the artifact set.
    Solve {
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
        /// proposed | center-hover | equal-bandwidth
        #[arg(long, default_value = "proposed")]
        mode: String,
        /// Overrides the sampler seed from the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if missing).
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the convergence threshold.
        #[arg(long)]
        eps: Option<f64>,
        /// Overrides the alternation-round cap.
        #[arg(long)]
        max_outer: Option<usize>,
    },
    /// Monte Carlo aggregates across one swept parameter.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// vehicles | power | rth
        #[arg(long)]
        param: String,
        /// Comma-separated ascending values.
        #[arg(long)]
        values: String,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Comma-separated modes.
        #[arg(long, default_value = "proposed")]
        modes: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Recompute the verification report from stored artifacts.
    Validate {
        /// Output directory of a prior solve run.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(raw) = std::env::var("UAVNET_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n >= 1 => {
                if let Err(err) = uavnet_core::experiments::configure_thread_limit(n) {
                    log::warn!("UAVNET_THREADS ignored: {err}");
                }
            }
            _ => log::warn!("UAVNET_THREADS must be a positive integer, got `{raw}`"),
        }
    }

    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve { scenario, mode, seed, out, eps, max_outer } => {
            let mode: Mode = match mode.parse() {
                Ok(m) => m,
                Err(err) => {
                    eprintln!("error: {err}");
                    return ExitCode::from(exit_code::IO_OR_SCHEMA as u8);
                }
            };
            cmd_solve(&SolveArgs { scenario, mode, seed, out, eps, max_outer })
        }
        Command::Sweep { scenario, param, values, trials, modes, seed, out } => {
            let param: SweepParameter = match param.parse() {
                Ok(p) => p,
                Err(err) => {
                    eprintln!("error: {err}");
                    return ExitCode::from(exit_code::IO_OR_SCHEMA as u8);
                }
            };
            let values = match commands::parse_values(&values) {
                Ok(v) => v,
                Err(err) => {
                    eprintln!("error: {err:#}");
                    return ExitCode::from(exit_code::IO_OR_SCHEMA as u8);
                }
            };
            let modes = match commands::parse_modes(&modes) {
                Ok(m) => m,
                Err(err) => {
                    eprintln!("error: {err:#}");
                    return ExitCode::from(exit_code::IO_OR_SCHEMA as u8);
                }
            };
            if trials == 0 {
                eprintln!("error: --trials must be at least 1");
                return ExitCode::from(exit_code::IO_OR_SCHEMA as u8);
            }
            cmd_sweep(&SweepArgs { scenario, param, values, trials, modes, seed, out })
        }
        Command::Validate { dir } => cmd_validate(&dir),
    };
    ExitCode::from(code as u8)
}
