//! `cdkf-sched`: plan measurement rates, turn them into schedules, simulate, verify and
//! compare schedulers. Every command writes its artifacts plus a `manifest.json` into `--out`.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid input (exit 1).
    Input(String),
    /// The planner stopped without meeting its tolerances (exit 2). Outputs are still written.
    NotConverged(String),
    /// The scenario violates the precondition of the requested check (exit 3).
    Precondition(String),
    /// The Monte Carlo check ran but did not pass (exit 4).
    VerifyFailed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::NotConverged(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::VerifyFailed(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m)
            | CliError::NotConverged(m)
            | CliError::Precondition(m)
            | CliError::VerifyFailed(m) => m,
        }
    }
}

impl From<cdkf_sched::Error> for CliError {
    fn from(e: cdkf_sched::Error) -> Self {
        match e {
            cdkf_sched::Error::Precondition(_) => CliError::Precondition(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "cdkf-sched",
    version,
    about = "Measurement scheduling for continuous-discrete Kalman filters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Scenario config plus the overrides accepted by every config-driven command.
#[derive(Args, Clone, Debug)]
pub struct ConfigArgs {
    /// Scenario config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the number of planning grid nodes.
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Override the solver's feasibility tolerance.
    #[arg(long)]
    pub feas_tol: Option<f64>,
    /// Override the solver's optimality tolerance.
    #[arg(long)]
    pub opt_tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the rate/input planning problem.
    Plan {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Quantize a rate plan into deterministic measurement times.
    Schedule {
        /// rates.csv as written by `plan`.
        #[arg(long)]
        rates: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulate the true system under a schedule, then filter and smooth the measurements.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// schedule.csv as written by `schedule`.
        #[arg(long)]
        schedule: PathBuf,
        /// inputs.csv as written by `plan`; defaults to zero inputs clipped to the input box.
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Monte Carlo check that the planned bounds dominate the sampled covariances.
    Verify {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        rates: PathBuf,
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Plan, then compare Optimized, M-Optimized, Greedy and Random schedules.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Kalman filter + RTS smoother on a kernel state-space model versus dense GP regression.
    GpDemo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan { config, out } => commands::plan(&config, &out),
        Command::Schedule { rates, out } => commands::schedule(&rates, &out),
        Command::Simulate {
            config,
            schedule,
            inputs,
            seed,
            out,
        } => commands::simulate(&config, &schedule, inputs.as_deref(), seed, &out),
        Command::Verify {
            config,
            rates,
            inputs,
            reps,
            seed,
            out,
        } => commands::verify(&config, &rates, inputs.as_deref(), reps, seed, &out),
        Command::Compare {
            config,
            reps,
            seed,
            out,
        } => commands::compare(&config, reps, seed, &out),
        Command::GpDemo { seed, out } => commands::gp_demo(seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cdkf-sched: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
