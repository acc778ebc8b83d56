//! Library side of the `vibroloc` binary: argument definitions, layered
//! settings, the training/sweep protocols and one function per subcommand.

pub mod args;
pub mod commands;
pub mod protocol;
pub mod settings;

use std::fmt;

pub use args::Cli;

/// Bad flags or config values; maps to exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "usage: {}", self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Exit code for a failed run: 2 usage, 4 numeric failure, 3 anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(vibroloc::Error::Numeric(_)) = cause.downcast_ref::<vibroloc::Error>() {
            return EXIT_NUMERIC;
        }
    }
    EXIT_DATA
}

/// Runs a parsed command line inside a worker pool capped by `--jobs`.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.common.jobs {
        if n == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| commands::dispatch(&cli))
}
