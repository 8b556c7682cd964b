//! Command-line front end for trip-record releases.
//!
//! `main.rs` only parses arguments and maps the result to an exit status;
//! everything else lives here so it can be exercised from tests.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use tripdp_core::{Error, Execution};

pub mod commands;
pub mod config;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    Internal = 1,
    /// Bad arguments or an invalid config document.
    Config = 2,
    BudgetRefused = 3,
    Io = 4,
    InvalidData = 5,
    AuditFailed = 6,
}

impl Status {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub message: String,
}

impl CliError {
    pub fn new(status: Status, message: impl Into<String>) -> Self {
        CliError {
            status,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Status::Config, message)
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        Self::new(Status::Io, format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::BudgetExceeded { .. } | Error::ScopeConflict { .. } => Status::BudgetRefused,
            Error::InvalidPlan(_)
            | Error::InvalidBinWidth(_)
            | Error::InvalidBudget(_)
            | Error::InvalidSnapping(_)
            | Error::InvalidAudit(_)
            | Error::InvalidDensityThreshold
            | Error::ZeroDelta => Status::Config,
            Error::Io { .. } | Error::ReleaseLog { .. } => Status::Io,
            Error::MalformedInput(_) | Error::Csv(_) | Error::InvalidTime(_) => Status::InvalidData,
            _ => Status::Internal,
        };
        CliError::new(status, e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::new(Status::Io, e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tripdp",
    version,
    about = "Differentially private release of trip records"
)]
pub struct Cli {
    /// Run on one thread instead of the worker pool.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a release config without touching any data.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a release and record its budget charges.
    Release {
        #[arg(long)]
        config: PathBuf,
        /// Reproducible noise. For testing only; the output is not private.
        #[arg(long, conflicts_with = "secure")]
        seed: Option<u64>,
        /// Noise keyed from operating-system entropy, for real releases.
        #[arg(long)]
        secure: bool,
    },
    /// Report (k, γ) density per partition and marginal before releasing.
    Density {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: u64,
        /// Take partitions, bins and location rules from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Time-bin width when no config is given.
        #[arg(long, default_value_t = 15, conflicts_with = "config")]
        bin_minutes: u32,
    },
    /// Turn a counts file into row form.
    Expand {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Turn a row-form file back into counts.
    Aggregate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Monte Carlo privacy and utility audit of the release mechanism.
    Audit {
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, requires = "delta")]
        epsilon: Option<f64>,
        #[arg(long, requires = "epsilon")]
        delta: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic trip file, stop lookup and release config.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        rows_per_partition: usize,
        #[arg(long, default_value = "2016-07-25")]
        start: NaiveDate,
        #[arg(long, default_value_t = 14)]
        days: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Run one parsed command. Normal output goes to `out`, warnings to `err`.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<Status, CliError> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Validate { config } => commands::validate(&config, out),
        Command::Release {
            config,
            seed,
            secure,
        } => commands::release(&config, seed, secure, exec, out, err).map(|_| Status::Success),
        Command::Density {
            input,
            k,
            config,
            bin_minutes,
        } => commands::density(&input, k, config.as_deref(), bin_minutes, exec, out),
        Command::Expand { input, output } => commands::expand(&input, &output, out),
        Command::Aggregate { input, output } => commands::aggregate(&input, &output, out),
        Command::Audit {
            trials,
            epsilon,
            delta,
            seed,
        } => commands::audit(trials, epsilon.zip(delta), seed, exec, out),
        Command::Generate {
            out: dir,
            rows_per_partition,
            start,
            days,
            seed,
        } => commands::generate(&dir, rows_per_partition, start, days, seed, out),
    }
}

/// `(ε=8, δ=7.5e-7)`, with float noise from summation trimmed.
pub fn format_guarantee(epsilon: f64, delta: f64) -> String {
    let trim = |x: f64| format!("{x:.10e}").parse::<f64>().unwrap_or(x);
    format!("(ε={}, δ={:e})", trim(epsilon), trim(delta))
}
