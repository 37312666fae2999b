//! Command-line driver for `fracfield`.
//!
//! Every subcommand is a plain function over parsed arguments so the
//! integration tests and the acceptance suite can call them directly.

pub mod argo;
pub mod args;
pub mod commands;
pub mod experiment;
pub mod provenance;

use std::process::ExitCode;

use clap::Parser;
use fracfield::error::Error;

pub use args::Cli;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "FRACFIELD_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Error,
    },
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self::Usage(message.into())
    }

    /// 2 usage, 3 I/O, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        let core = match self {
            Self::Usage(_) => return 2,
            Self::Stage { source, .. } => source,
            Self::Core(e) => e,
        };
        match core {
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Numerical(_) => 4,
            Error::Dimension { .. } | Error::Domain(_) | Error::Input(_) | Error::Config(_) => 2,
        }
    }
}

/// Attaches a pipeline stage name to core errors.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for fracfield::error::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

/// Sizes the global thread pool from [`THREADS_ENV`] when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::usage(format!(
            "{THREADS_ENV} must be a positive integer, got {raw:?}"
        ))
    })?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        args::Command::Simulate(a) => commands::simulate(&a),
        args::Command::Fit(a) => commands::fit(&a),
        args::Command::Variogram(a) => commands::variogram(&a),
        args::Command::Experiment(a) => experiment::run_command(&a),
        args::Command::Argo(a) => argo::run_command(&a),
    }
}

/// Entry point shared by the binary: parses `std::env::args`, runs, and maps
/// errors to exit codes.
pub fn main_with_args<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
