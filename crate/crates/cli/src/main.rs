//! `geneq`: blind generative equalization of degraded audio recordings.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use geneq_core::Error;

use commands::{DegradeArgs, EvalArgs, LtasArgs, ShowFilterArgs};
use config::Overrides;

#[derive(Parser)]
#[command(
    name = "geneq",
    version,
    about = "Blind generative equalization: restore filtered recordings and estimate the filter",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    /// Worker threads for data-parallel kernels (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Restore a recording from a TOML run configuration.
    Restore {
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Override the configured mode (ltas-eq, babe2, babe2-ltas-init, babe2-ltas-obj).
        #[arg(long)]
        mode: Option<String>,
        /// Override the configured RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured output path.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Override the configured preset (piano, vocals).
        #[arg(long)]
        preset: Option<String>,
    },
    /// Apply a known degradation filter and/or additive noise to a WAV file.
    Degrade {
        /// Input WAV file.
        #[arg(long)]
        input: PathBuf,
        /// Output WAV file.
        #[arg(long)]
        output: PathBuf,
        /// Filter parameter TOML file to apply.
        #[arg(long, conflicts_with = "filter_preset")]
        filter: Option<PathBuf>,
        /// Built-in filter: flat (bypass) or gramophone.
        #[arg(long)]
        filter_preset: Option<String>,
        /// Add white Gaussian noise at this signal-to-noise ratio in dB.
        #[arg(long)]
        snr_db: Option<f64>,
        /// RNG seed for the additive noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute a long-term average spectrum profile from a WAV corpus.
    Ltas {
        /// Output CSV path for the profile.
        #[arg(long)]
        output: PathBuf,
        /// Corpus WAV files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Score WAV files by spectral distance to a reference profile.
    Eval {
        /// Reference profile CSV (from the ltas command).
        #[arg(long)]
        reference: PathBuf,
        /// Optional CSV path for the per-file results.
        #[arg(long)]
        output: Option<PathBuf>,
        /// WAV files to score.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Tabulate a filter's magnitude response as CSV.
    ShowFilter {
        /// Filter parameter TOML file.
        #[arg(long)]
        filter: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        output: PathBuf,
        /// Number of log-spaced frequency points.
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
}

fn run(cli: Cli) -> geneq_core::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Validation(vec![
                "jobs must be at least 1".to_string(),
            ]));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool setup failed: {e}")))?;
    }

    match cli.command {
        Command::Restore {
            config,
            mode,
            seed,
            output,
            preset,
        } => commands::cmd_restore(
            &config,
            Overrides {
                mode,
                seed,
                output,
                preset,
            },
        ),
        Command::Degrade {
            input,
            output,
            filter,
            filter_preset,
            snr_db,
            seed,
        } => commands::cmd_degrade(&DegradeArgs {
            input,
            output,
            filter_file: filter,
            filter_preset,
            snr_db,
            seed,
        }),
        Command::Ltas { output, inputs } => commands::cmd_ltas(&LtasArgs { inputs, output }),
        Command::Eval {
            reference,
            output,
            files,
        } => commands::cmd_eval(&EvalArgs {
            files,
            reference,
            output,
        }),
        Command::ShowFilter {
            filter,
            output,
            points,
        } => commands::cmd_show_filter(&ShowFilterArgs {
            filter,
            output,
            points,
        }),
    }
}

/// Exit codes: 0 success, 2 invalid request, 3 I/O or file format
/// trouble, 4 numerical failure. Argument parse errors from clap also
/// exit 2.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Numeric { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
