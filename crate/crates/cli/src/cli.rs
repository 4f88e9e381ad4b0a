//! Argument surface and exit-code policy.
//!
//! Exit codes are part of the contract: 0 success, 2 configuration or
//! argument problems, 3 solver non-convergence, 4 IO failures. Scripts
//! branch on them, so the mapping below is stable.

use clap::{Parser, Subcommand};
use splatrig::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use crate::commands;

#[derive(Debug, Parser)]
#[command(
    name = "splatrig",
    version,
    about = "Multi-camera dense SLAM on synthetic sequences"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON config file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Caps the worker thread count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Forces the serialized, bitwise-reproducible pipeline schedule.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Output directory; each subcommand documents its default.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-camera dataset (default out: dataset/).
    Synth,
    /// Run online tracking and mapping on a dataset (default out: run/).
    Track {
        /// Dataset directory written by `synth`.
        dataset: PathBuf,
        /// Disable joint depth-scale alignment.
        #[arg(long)]
        no_jdsa: bool,
    },
    /// Re-run a tracked sequence and apply offline refinement
    /// (default out: <run>-refined/).
    Refine {
        /// Run directory written by `track` or `refine`.
        run: PathBuf,
    },
    /// Score a run against dataset ground truth (default out: <run>/eval/).
    Eval {
        /// Run directory to score.
        run: PathBuf,
        /// Dataset directory holding the ground truth.
        dataset: PathBuf,
    },
    /// Render the stored map along the estimated trajectory
    /// (default out: <run>/renders/, overwriting the tracked renders).
    Render {
        /// Run directory holding map, trajectory and rig.
        run: PathBuf,
    },
}

/// Flag values shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub out: Option<PathBuf>,
}

impl Overrides {
    fn from_cli(cli: &Cli) -> Self {
        Overrides {
            config: cli.config.clone(),
            seed: cli.seed,
            deterministic: cli.deterministic,
            out: cli.out.clone(),
        }
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Parse(_) | Error::Generation { .. } => 2,
        Error::Solver(_)
        | Error::Convergence { .. }
        | Error::Optimization(_)
        | Error::Linearization { .. } => 3,
        Error::Io(_) => 4,
    }
}

pub fn main_impl() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // Build the global pool before any parallel work; a failure here
        // only means a pool already exists, which is fine.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let ov = Overrides::from_cli(&cli);
    let result = match &cli.command {
        Command::Synth => commands::synth::run(&ov),
        Command::Track { dataset, no_jdsa } => commands::track::run(&ov, dataset, *no_jdsa),
        Command::Refine { run } => commands::refine::run(&ov, run),
        Command::Eval { run, dataset } => commands::eval::run(&ov, run, dataset),
        Command::Render { run } => commands::render::run(&ov, run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
