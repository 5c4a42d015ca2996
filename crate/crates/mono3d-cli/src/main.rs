//! `mono3d` — batch workflows over the mono3d library.
//!
//! Six subcommands cover the full loop: `synth` writes scenes, ground
//! truth, and detection records; `annotate` derives ground truth from weak
//! 3D boxes; `infer` lifts detections to 3D; `eval` scores results;
//! `check-grad` verifies the loss gradients; `bench-pose` measures the
//! pose solver. Every run is driven by one [`config::RunConfig`] — a TOML
//! or JSON file plus flag overrides (flags win) — and replays exactly from
//! its single seed.
//!
//! Exit codes: 0 on success, 1 for validation problems (bad flags, bad
//! config, missing or mismatched inputs), 2 for failures at run time.
//! Diagnostics go to standard error; results go to standard output and the
//! output directory.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Failure modes, carrying the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    /// The request itself is unusable: unparseable config, invalid values,
    /// missing input files. Exit code 1.
    Validation(String),
    /// The request was sound but the run failed. Exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) | CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mono3d", version, about = "Monocular 3D vehicle analysis toolkit")]
struct Cli {
    #[command(flatten)]
    overrides: config::Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes: weak boxes, ground truth, and detection
    /// records (with the configured noise; zero noise gives ideal records).
    Synth {
        /// Number of images to generate.
        #[arg(long, default_value_t = 1)]
        images: usize,
    },
    /// Derive full ground truth from weak 3D box annotations.
    Annotate {
        /// Weak-box records file.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
    },
    /// Lift detection records to 3D results.
    Infer {
        /// Detection records file.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
    },
    /// Score 3D results against ground truth.
    Eval {
        /// Results records file.
        #[arg(long, value_name = "FILE")]
        dets: PathBuf,
        /// Ground-truth records file.
        #[arg(long, value_name = "FILE")]
        gt: PathBuf,
    },
    /// Compare analytic loss gradients against finite differences.
    CheckGrad {
        /// Random probe points per loss family.
        #[arg(long, default_value_t = 100)]
        points: usize,
        /// Finite-difference step.
        #[arg(long, default_value_t = mono3d::codec::DEFAULT_STEP)]
        step: f64,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Measure pose recovery accuracy and latency on random placements.
    BenchPose {
        /// Number of random poses to solve.
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version arrive here too; only genuine argument
            // problems count as validation failures.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    let result = config::merged(&cli.overrides).and_then(|cfg| match &cli.command {
        Command::Synth { images } => commands::synth(&cfg, *images),
        Command::Annotate { input } => commands::annotate(&cfg, input),
        Command::Infer { input } => commands::infer(&cfg, input),
        Command::Eval { dets, gt } => commands::eval(&cfg, dets, gt),
        Command::CheckGrad { points, step, tol } => {
            commands::check_grad(&cfg, *points, *step, *tol)
        }
        Command::BenchPose { trials } => commands::bench_pose(&cfg, *trials),
    });
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
