//! Command-line front end: configuration, fit archives, the workflow
//! report and SVG rendering on top of the `bayesflow` engine.

pub mod archive;
pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod svg;
pub mod workflow;

use std::ffi::OsString;

use clap::Parser;

pub use archive::FitArchive;
pub use commands::Outcome;
pub use config::RunConfig;
pub use error::{CliError, CliResult, EXIT_INPUT, EXIT_OK, EXIT_USAGE, EXIT_VERDICT};

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(Outcome::Passed) => EXIT_OK,
        Ok(Outcome::VerdictFailed) => EXIT_VERDICT,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: args::Cli) -> CliResult<Outcome> {
    let config = RunConfig::load_optional(cli.global.config.as_deref())?;
    if let Some(n) = cli.global.threads.or(config.threads) {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let ctx = commands::Context {
        config,
        global: cli.global,
        env_out: config::output_dir_from_env(),
    };
    commands::dispatch(&ctx, cli.command)
}
