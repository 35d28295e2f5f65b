//! Command-line surface: training, evaluation, benchmarking, data prep.
//!
//! Exit codes: 0 success, 1 validation failure (bad flags or config),
//! 2 runtime failure. Every subcommand is deterministic given its config
//! and seed; reports honor the `IMFN_TIMESTAMP` env var so reruns can be
//! compared byte for byte.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

use config::Profile;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(anyhow::Error),
}

impl From<imfn_core::Error> for CliError {
    fn from(e: imfn_core::Error) -> Self {
        match e {
            imfn_core::Error::Config(msg) => CliError::Validation(msg),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "imfn", version, about = "Tree-structured sequence compression: teacher training, student distillation, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// TOML run configuration; fields override the profile defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from this profile's defaults instead of the config file's.
    #[arg(long)]
    pub profile: Option<Profile>,
    /// Use a single seed, overriding the configured seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    fn overrides(&self) -> config::Overrides {
        config::Overrides {
            profile: self.profile,
            seed: self.seed,
            out_dir: self.out.clone(),
        }
    }

    pub fn resolve(&self) -> Result<config::RunConfig, CliError> {
        config::load_config(self.config.as_deref(), &self.overrides())
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train teachers over the configured (memory size x seed) grid.
    TrainTeacher {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Distill a student from a frozen teacher checkpoint.
    TrainStudent {
        #[command(flatten)]
        common: CommonArgs,
        /// Teacher checkpoint to distill from.
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Run an evaluation protocol; writes JSON reports and CSV curves.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Teacher checkpoint(s); multiple produce a cross-seed summary.
        #[arg(long, required = true)]
        teacher: Vec<PathBuf>,
        /// Student checkpoint, required by the student protocols.
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long, value_parser = ["teacher-roundtrip", "student-prefix", "end-of-sequence"])]
        protocol: String,
        /// Sequence length; defaults to the configured horizon.
        #[arg(long)]
        horizon: Option<usize>,
        /// Number of evaluation sequences; defaults to the configured value.
        #[arg(long)]
        num_sequences: Option<usize>,
    },
    /// Compare incremental vs naive trajectory generation (merge counts
    /// and wall time per n).
    BenchTrajectory {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        teacher: PathBuf,
        /// Sequence lengths, comma-separated powers of two.
        #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 4, 8, 16, 32])]
        n: Vec<usize>,
    },
    /// Dataset utilities: IDX conversion, split files, synthetic images.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
}

#[derive(Subcommand, Debug)]
pub enum DataCommand {
    /// Parse an IDX image file and re-emit it normalized.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_file: PathBuf,
    },
    /// Write a train/test split file for a dataset of the given size.
    Split {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0.9)]
        ratio: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_file: PathBuf,
    },
    /// Generate a synthetic low-rank image dataset as an IDX file.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 4)]
        intrinsic_dim: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_file: PathBuf,
    },
}

/// Parses and dispatches; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::TrainTeacher { common } => commands::train_teacher(&common.resolve()?),
        Command::TrainStudent { common, teacher } => {
            commands::train_student(&common.resolve()?, &teacher)
        }
        Command::Eval { common, teacher, student, protocol, horizon, num_sequences } => {
            let mut cfg = common.resolve()?;
            if let Some(t) = horizon {
                cfg.horizon = t;
                cfg.student.horizon = t;
            }
            if let Some(n) = num_sequences {
                cfg.num_sequences = n;
            }
            let problems = cfg.validate();
            if !problems.is_empty() {
                return Err(CliError::Validation(problems.join("; ")));
            }
            commands::eval(&cfg, &teacher, student.as_deref(), &protocol)
        }
        Command::BenchTrajectory { common, teacher, n } => {
            commands::bench_trajectory(&common.resolve()?, &teacher, &n)
        }
        Command::Data { command } => commands::data(command),
    }
}
