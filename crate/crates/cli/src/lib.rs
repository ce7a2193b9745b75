//! Command-line pipeline: calibrate, mask, band screening, red edge,
//! synthetic data, training, evaluation and ablation.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric error.

mod args;
mod commands;
mod config;
mod dataset;

use std::fmt;
use std::io::Write;

pub use args::{
    AblateArgs, BandsArgs, CalibrateArgs, Cli, Command, EvalArgs, MaskArgs, ModelFlags, RedEdgeArgs, ScreenFlags,
    SynthArgs, TrainArgs,
};
pub use commands::{cmd_ablate, cmd_bands, cmd_calibrate, cmd_eval, cmd_mask, cmd_rededge, cmd_synth, cmd_train};
pub use config::{BandMode, RunConfig};
pub use dataset::{prepare, Prepared};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(hsicube::error::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use hsicube::error::Error;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(Error::Usage(_) | Error::Config(_)) => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CliError {}

impl From<hsicube::error::Error> for CliError {
    fn from(e: hsicube::error::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Caps rayon's global pool from `HSICUBE_THREADS` when it is set.
pub fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("HSICUBE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("HSICUBE_THREADS must be a positive integer, got '{v}'")))?;
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one parsed command, writing progress lines to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Calibrate(a) => cmd_calibrate(&a, out),
        Command::Mask(a) => cmd_mask(&a, out),
        Command::Bands(a) => cmd_bands(&a, out),
        Command::Rededge(a) => cmd_rededge(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Ablate(a) => cmd_ablate(&a, out),
    }
}
