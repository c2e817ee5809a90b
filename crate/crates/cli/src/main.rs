//! `membell`: simulate, analyze, sweep, fit and report.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use membell::Error;

#[derive(Debug, Parser)]
#[command(name = "membell", version, about = "Photon / atomic-memory Bell test simulator")]
struct Cli {
    /// Directory for outputs whose path is not given explicitly.
    #[arg(long, global = true, env = "MEMBELL_OUT_DIR", default_value = "membell-out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an event log from a configuration file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Log path; defaults to <out-dir>/<run_id>.log.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the scheduler action trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Estimate E, S, g12, pc and V for every group in a log.
    Analyze {
        log: PathBuf,
        /// Coincidence window in ns after the storage time; whole trial if omitted.
        #[arg(long)]
        window: Option<u64>,
        /// Results file; printed to stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the g12 vs τ table used by `fit --model decay`.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Run one simulation per grid point and tabulate g12, pc and S.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// `p_excitation=0.01,0.05,...` or `tau=0us,5us,...`.
        #[arg(long)]
        axis: String,
        /// Table path; defaults to <out-dir>/sweep-<axis>-<seed>.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a model to a table.
    Fit {
        table: PathBuf,
        #[arg(long, value_enum)]
        model: FitModel,
        /// Result file; printed to stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build plot-ready S vs g12 and S, g12 vs τ tables from sweep tables.
    Report {
        results: PathBuf,
        /// Output directory; defaults to the results directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Smax for the τ prediction when no excitation sweep is present.
        #[arg(long, default_value_t = 2.74)]
        smax: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    Smax,
    Decay,
}

/// 2 for configuration errors, 3 for bad data, 4 for failed fits.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. }) => 2,
        Some(
            Error::Data { .. } | Error::VersionMismatch { .. } | Error::UndefinedEstimate(_) | Error::InvalidInput(_),
        ) => 3,
        Some(Error::NonConvergence { .. } | Error::IllConditioned(_)) => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            seed,
            out,
            trace,
        } => commands::simulate(&config, seed, out, trace, &cli.out_dir),
        Command::Analyze {
            log,
            window,
            out,
            table,
        } => commands::analyze(&log, window, out, table),
        Command::Sweep {
            config,
            seed,
            axis,
            out,
        } => commands::sweep(&config, seed, &axis, out, &cli.out_dir),
        Command::Fit { table, model, out } => commands::fit(&table, model, out),
        Command::Report { results, out, smax } => commands::report(&results, out, smax),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
