//! `aopt`: build a frozen low-rank model once, then solve, round, verify and
//! benchmark sensor designs against it.
//!
//! Exit codes: 0 success, 2 bad configuration or input, 3 numerical failure
//! or non-convergence (outputs are still written).

mod bundle;
mod commands;
mod fail;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::LevelFilter;

use aopt::Execution;

use crate::commands::{Outcome, SweepArgs};
use crate::fail::{CliResult, EXIT_NUMERICAL};

#[derive(Parser)]
#[command(name = "aopt", version, about = "A-optimal sensor placement with a frozen low-rank model")]
struct Cli {
    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Run every loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the forward model, calibrate noise, compute the QR and save a bundle.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve the convex relaxation and classify sensors by gradient.
    Solve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        m0: usize,
        /// Frank-Wolfe gap tolerance (defaults to the config value).
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Round the relaxed design to a binary one by p-continuation.
    Continue {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        m0: usize,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Check a design file against the global optimality conditions.
    Verify {
        #[arg(long)]
        bundle: PathBuf,
        /// CSV with `sensor` and `weight` columns.
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        m0: usize,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Enumerate every binary design with exactly `m0` sensors.
    Oracle {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        m0: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate uniformly random binary designs.
    Baseline {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        m0: usize,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Posterior pointwise variance of a design on the parameter nodes.
    Variance {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Solve, round and compare with random designs for a range of budgets.
    Sweep {
        #[arg(long)]
        bundle: PathBuf,
        /// Budgets, e.g. `8`, `1-12` or `2,4,6`.
        #[arg(long)]
        m0: String,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Random designs per budget.
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Baseline seed; budget `m0` samples with `seed + m0`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn out_dir(path: &Path) -> CliResult<&Path> {
    std::fs::create_dir_all(path).map_err(|e| fail::config_err(format!("cannot create {}: {e}", path.display())))?;
    Ok(path)
}

fn run(cli: Cli) -> CliResult<Outcome> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Build { config, out_dir: out, seed } => commands::build(&config, &out, seed, exec),
        Command::Solve { bundle, m0, tol, out_dir: out } => commands::solve(&bundle::load(&bundle)?, m0, tol, out_dir(&out)?),
        Command::Continue {
            bundle,
            m0,
            delta,
            tol,
            out_dir: out,
        } => commands::continuation(&bundle::load(&bundle)?, m0, delta, tol, out_dir(&out)?),
        Command::Verify {
            bundle,
            design,
            m0,
            tol,
            out_dir: out,
        } => commands::verify(&bundle::load(&bundle)?, &design, m0, tol, out_dir(&out)?),
        Command::Oracle { bundle, m0, out_dir: out } => commands::oracle(&bundle::load(&bundle)?, m0, out_dir(&out)?, exec),
        Command::Baseline {
            bundle,
            m0,
            count,
            seed,
            out_dir: out,
        } => commands::baseline(&bundle::load(&bundle)?, m0, count, seed, out_dir(&out)?, exec),
        Command::Variance { bundle, design, out_dir: out } => commands::variance(&bundle::load(&bundle)?, &design, out_dir(&out)?, exec),
        Command::Sweep {
            bundle,
            m0,
            delta,
            count,
            seed,
            tol,
            out_dir: out,
        } => {
            let args = SweepArgs {
                m0s: commands::parse_m0_list(&m0)?,
                delta,
                count,
                seed,
                tol,
            };
            commands::sweep(&bundle::load(&bundle)?, &args, out_dir(&out)?, exec)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        2 => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(out) if out.converged => {
            println!("{}", out.summary);
            ExitCode::SUCCESS
        }
        Ok(out) => {
            println!("{}", out.summary);
            eprintln!("error: did not converge");
            ExitCode::from(EXIT_NUMERICAL as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
