//! `caflow` command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or usage error,
//! 3 data error (unreadable or mismatched images and datasets), 4 numeric
//! abort during training.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use error::{CliError, EXIT_CONFIG};

#[derive(Parser)]
#[command(
    name = "caflow",
    version,
    about = "Conditional autoregressive flows for paired image translation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Psnr,
    Rmse,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run configuration file.
    Train { config: PathBuf },
    /// Draw samples for one condition image and keep the most likely ones.
    Sample {
        checkpoint: PathBuf,
        condition: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        temperature: f64,
        /// Samples drawn.
        #[arg(long, default_value_t = 10)]
        num: usize,
        /// Samples kept, in descending likelihood order.
        #[arg(long)]
        keep: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "samples")]
        out: PathBuf,
        /// Ground-truth image appended to the grid.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Print the conditional log-likelihood of a target given a condition.
    Likelihood {
        checkpoint: PathBuf,
        condition: PathBuf,
        target: PathBuf,
    },
    /// Score best-of-M samples against the targets of a test split.
    Eval {
        checkpoint: PathBuf,
        /// Split directory of target `.ppm` files, or a dataset root (its
        /// `test` split is used).
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Psnr)]
        metric: Metric,
        #[arg(long, default_value_t = 0.5)]
        temperature: f64,
        #[arg(long, default_value_t = 10)]
        best_of: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "eval.csv")]
        csv: PathBuf,
    },
    /// Write a synthetic paired dataset to disk.
    Dataset {
        out: PathBuf,
        #[arg(long, default_value = "colorize")]
        task: String,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 32)]
        val: usize,
        #[arg(long, default_value_t = 32)]
        test: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Build the splits from the `.ppm` images in this directory
        /// (centre-cropped and downsampled to `--size`) instead of
        /// generating synthetic ones. `--train` is ignored.
        #[arg(long)]
        from: Option<PathBuf>,
    },
}

/// Caps worker threads from `CAFLOW_THREADS`.
fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("CAFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::new(
            EXIT_CONFIG,
            format!("CAFLOW_THREADS must be a positive integer, got {v:?}"),
        )
    })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::new(error::EXIT_OTHER, format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Train { config } => commands::train(&config),
        Command::Sample {
            checkpoint,
            condition,
            temperature,
            num,
            keep,
            seed,
            out,
            truth,
        } => commands::sample(&commands::SampleArgs {
            checkpoint,
            condition,
            temperature,
            num,
            keep: keep.unwrap_or(num),
            seed,
            out,
            truth,
        }),
        Command::Likelihood {
            checkpoint,
            condition,
            target,
        } => commands::likelihood(&checkpoint, &condition, &target),
        Command::Eval {
            checkpoint,
            dir,
            metric,
            temperature,
            best_of,
            seed,
            csv,
        } => commands::eval(&commands::EvalArgs {
            checkpoint,
            dir,
            metric,
            temperature,
            best_of,
            seed,
            csv,
        }),
        Command::Dataset {
            out,
            task,
            size,
            channels,
            train,
            val,
            test,
            seed,
            from,
        } => commands::dataset(
            &out,
            &task,
            size,
            channels,
            [train, val, test],
            seed,
            from.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
