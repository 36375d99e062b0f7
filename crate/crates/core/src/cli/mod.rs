//! Command-line interface.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or argument
//! error, 3 data error, 4 solver failure.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: msg.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Argument(_) | Error::UnsupportedMode(_) => EXIT_CONFIG,
            Error::Io(_) | Error::Format(_) | Error::DimensionMismatch { .. } | Error::UnsupportedVersion(_) => EXIT_DATA,
            Error::Singular(_) | Error::NotPsd(_) => EXIT_SOLVER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ngeu", version, about = "Graph embedding of uncertain data via kernel mean embeddings")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every random stream; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model from a config file.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Model file; the fit report goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a dataset with a saved model.
    Transform {
        #[arg(long)]
        model: PathBuf,
        /// CSV (features then label, no header) or IDX image file.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid search with k-NN evaluation.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// k of the k-NN classifier; overrides the config.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Two-class toy problem in the plane.
    Toy2d {
        #[arg(long)]
        out: PathBuf,
        /// Multiplier applied to every covariance.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Rademacher complexity bounds.
    Bounds {
        /// Kernel matrix CSV: dense rows, or `i,j,value` triples.
        #[arg(long, conflicts_with_all = ["model", "config"])]
        kernel: Option<PathBuf>,
        /// Saved model; bounds its training kernel.
        #[arg(long, conflicts_with = "config")]
        model: Option<PathBuf>,
        /// Config with a [model] section; bounds the kernel of its training set.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Norm budget A; defaults to the model's RKHS norm, else 1.
        #[arg(long)]
        norm_budget: Option<f64>,
        /// Rademacher draws.
        #[arg(long, default_value_t = crate::bounds::DEFAULT_SIGMA_DRAWS)]
        n_sigma: usize,
        /// Also compare distribution and resampled-point complexities.
        #[arg(long)]
        verify_thm4: bool,
        /// Resampled datasets for the comparison.
        #[arg(long, default_value_t = crate::bounds::DEFAULT_DATASETS)]
        n_datasets: usize,
        /// Also write the report as TOML.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ranks and spectra of the kernel pencil with and without uncertainty.
    Rankreport {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// `# ngeu <version> seed=<seed> config_sha256=<hex>`.
pub fn provenance(seed: u64, config: &[u8]) -> String {
    format!(
        "# ngeu {} seed={seed} config_sha256={}",
        env!("CARGO_PKG_VERSION"),
        sha256_hex(config)
    )
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::config(e.to_string())),
    };
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    commands::dispatch(cli)
}

/// Process entry point: runs and converts the outcome into an exit code.
pub fn main_exit() -> std::process::ExitCode {
    match run(std::env::args_os()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::ExitCode::from(e.code)
        }
    }
}
