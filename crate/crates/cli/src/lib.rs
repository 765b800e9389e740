//! Command-line pipeline and HTTP service for the earthgan surrogate.

pub mod commands;
pub mod error;
pub mod resolve;
pub mod server;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use commands::{execute, Cli, Command};
pub use error::{CliError, CliResult};

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Failures print one line to `err`.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid usage");
            let msg = first.trim_start_matches("error: ");
            let _ = writeln!(err, "{}", CliError::usage(msg).line());
            return error::EXIT_USAGE;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", e.line());
            e.code
        }
    }
}
