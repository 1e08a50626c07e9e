//! `aupat`: pattern reports, fixture table checks, synthetic data and the
//! cross-validated experiments.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 a fixture tolerance check failed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_TOLERANCE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "aupat", version, about = "AU occurrence patterns, imbalance diagnostics and pattern-pretrained AU detection")]
struct Cli {
    /// Worker threads for parallel training and inference (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Base rates, pattern census, histogram and per-task top patterns of an annotations CSV.
    Analyze {
        /// Annotations CSV with header `subject,task,frame,AU<c1>,...`.
        annotations: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Correlation, spread and constant-predictor tables from the bundled fixtures.
    PaperTables {
        #[arg(long, default_value = "fixtures")]
        fixtures: PathBuf,
        /// Include the constant-ones column in the per-AU spread.
        #[arg(long)]
        std_with_ones: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Generate a synthetic annotations CSV plus images.
    GenData {
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pixel noise standard deviation (overrides the profile).
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run one experiment under subject-independent cross-validation.
    Run {
        #[arg(value_enum)]
        experiment: Experiment,
        #[command(flatten)]
        params: RunArgs,
    },
    /// Recompute pooled metrics from a run directory's stored predictions.
    Report { run_dir: PathBuf },
}

#[derive(Args, Debug, Clone)]
struct OutArgs {
    /// Parent directory; each invocation writes a fresh timestamped subdirectory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Flat JSON config; flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data directory written by `gen-data` (default: generate the desk profile in memory).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory of an exp3 run, for exp4 and unseen.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub min_count: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Dense-width multiplier for the network2 preset.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Bp4d,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
    Unseen,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
            Experiment::Exp3 => "exp3",
            Experiment::Exp4 => "exp4",
            Experiment::Unseen => "unseen",
        }
    }
}

/// An error tagged with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: EXIT_USAGE, error: e.into() })
    }
    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: EXIT_DATA, error: e.into() })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --jobs {n}: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::Analyze { annotations, out } => commands::analyze(&annotations, &out.out),
        Command::PaperTables { fixtures, std_with_ones, out } => commands::paper_tables(&fixtures, std_with_ones, &out.out),
        Command::GenData { profile, seed, noise, subjects, frames, out } => {
            commands::gen_data(profile, seed, noise, subjects, frames, &out.out)
        }
        Command::Run { experiment, params } => commands::run(experiment, &params),
        Command::Report { run_dir } => commands::report(&run_dir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
