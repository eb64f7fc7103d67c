//! Command-line front end: `simulate`, `preprocess`, `calibrate` and `evaluate`.
//!
//! Exit codes: 0 success, 1 I/O or malformed input, 2 configuration error or
//! unmet precondition, 3 calibration finished but is unvalidated or degenerate
//! (the report is still written), 4 solver or pipeline failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use rts_calib::calibrate::CalibrateError;
use rts_calib::ingest::IngestError;
use rts_calib::preprocess::PipelineError;

pub mod commands;
pub mod config;
pub mod manifest;
pub mod truth;

pub use config::Config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<CalibrateError> for CliError {
    fn from(e: CalibrateError) -> Self {
        match e {
            CalibrateError::TooFewPoints { .. } | CalibrateError::LengthMismatch(..) | CalibrateError::InvalidConfig(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidConfig(_) | PipelineError::StationSet => CliError::Config(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// 0, or 3 for a calibration that is not validated.
    pub exit_code: u8,
    /// One-line `key=value` summary for stdout.
    pub summary: String,
}

#[derive(Debug, Parser)]
#[command(name = "rts-calib", version, about = "Extrinsic calibration of three robotic total stations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with ground truth.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Synchronize three measurement logs onto a common time grid.
    Preprocess {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        thresholds: PipelineOverrides,
    },
    /// Estimate T_12 and T_13 and write a report.
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        thresholds: PipelineOverrides,
        /// two_point, static_gcp, dynamic_gcp or inter_prism.
        #[arg(long)]
        method: Option<String>,
    },
    /// Compare a report against ground truth or against another report.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        /// Truth file written by `simulate`.
        #[arg(long, conflicts_with = "against", required_unless_present = "against")]
        truth: Option<PathBuf>,
        /// Second report to compare with.
        #[arg(long)]
        against: Option<PathBuf>,
        /// Directory for evaluation.txt; the table goes to stderr when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration; defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the root seed of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct InputArgs {
    /// Directory holding files with the names `simulate` writes.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Measurement logs of stations 1, 2 and 3.
    #[arg(long, num_args = 3, value_names = ["LOG1", "LOG2", "LOG3"])]
    pub logs: Option<Vec<PathBuf>>,
    /// Synchronized trajectories written by `preprocess`.
    #[arg(long)]
    pub synced: Option<PathBuf>,
    /// Inter-prism distance file.
    #[arg(long)]
    pub distances: Option<PathBuf>,
    /// GCP observations of stations 1, 2 and 3.
    #[arg(long, num_args = 3, value_names = ["GCP1", "GCP2", "GCP3"])]
    pub gcp: Option<Vec<PathBuf>>,
    /// Surveyed GCP coordinates in the world frame.
    #[arg(long)]
    pub world_gcp: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct PipelineOverrides {
    /// Range-rate threshold, m/s.
    #[arg(long)]
    pub tau_r: Option<f64>,
    /// Elevation-rate threshold, deg/s.
    #[arg(long)]
    pub tau_e: Option<f64>,
    /// Azimuth-rate threshold, deg/s.
    #[arg(long)]
    pub tau_a: Option<f64>,
    /// Largest gap inside an interval, s.
    #[arg(long)]
    pub tau_s: Option<f64>,
    /// Shortest interval kept, s.
    #[arg(long)]
    pub tau_l: Option<f64>,
    /// Resampling rate, Hz.
    #[arg(long)]
    pub output_rate: Option<f64>,
    /// linear or gp.
    #[arg(long)]
    pub interpolation: Option<String>,
    #[arg(long)]
    pub no_outlier_filter: bool,
    #[arg(long)]
    pub no_interval_filter: bool,
}

impl PipelineOverrides {
    pub fn apply(&self, cfg: &mut Config) {
        let p = &mut cfg.pipeline;
        let pairs = [
            (self.tau_r, &mut p.tau_r_m_s),
            (self.tau_e, &mut p.tau_e_deg_s),
            (self.tau_a, &mut p.tau_a_deg_s),
            (self.tau_s, &mut p.tau_s_s),
            (self.tau_l, &mut p.tau_l_s),
            (self.output_rate, &mut p.output_rate_hz),
        ];
        for (v, slot) in pairs {
            if let Some(v) = v {
                *slot = v;
            }
        }
        if let Some(kind) = &self.interpolation {
            p.interpolation = kind.clone();
        }
        if self.no_outlier_filter {
            p.outlier_filter = false;
        }
        if self.no_interval_filter {
            p.interval_filter = false;
        }
    }
}

pub fn execute(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Simulate { common } => commands::simulate(&common),
        Command::Preprocess { common, inputs, thresholds } => commands::preprocess(&common, &inputs, &thresholds),
        Command::Calibrate { common, inputs, thresholds, method } => {
            commands::calibrate(&common, &inputs, &thresholds, method.as_deref())
        }
        Command::Evaluate { report, truth, against, out } => {
            commands::evaluate(&report, truth.as_deref(), against.as_deref(), out.as_deref())
        }
    }
}

/// Parses `args` (program name first) and runs the command without printing.
/// Argument errors map to [`CliError::Config`].
pub fn execute_args<I, T>(args: I) -> Result<Outcome, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    execute(cli)
}

/// Parses `args` (program name first), runs the command, prints the summary
/// line or the error, and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!("status=error exit={}", e.exit_code());
            e.exit_code()
        }
    }
}
