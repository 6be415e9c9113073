//! The `srdist` command-line tool as a library, so tests can drive it
//! in-process.

pub mod args;
pub mod commands;
pub mod config;
pub mod output;
pub mod selftest;

use std::fmt;
use std::io::Write;

use clap::Parser;

/// Bad flags, config files or model descriptions (exit code 2).
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug)]
pub enum CliError {
    Usage(UsageError),
    Core(srdist_core::Error),
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e)
    }
}

impl From<srdist_core::Error> for CliError {
    fn from(e: srdist_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use srdist_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(E::Input(_) | E::Capability { .. } | E::Domain(_) | E::Resource(_)) => EXIT_USAGE,
            CliError::Core(E::Numerical(_) | E::NotFound(_)) => EXIT_NUMERICAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "{e}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(UsageError(msg.into()))
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Parses `argv` (including the program name), runs the command and
/// returns the exit code.  Reports go to `out` unless `--out` names a file.
pub fn run(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    return EXIT_OK;
                }
                _ => EXIT_USAGE,
            };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    match commands::execute(cli) {
        Ok(done) => {
            let written = match &done.path {
                Some(p) => std::fs::write(p, &done.text).map_err(|e| format!("cannot write '{p}': {e}")),
                None => out.write_all(done.text.as_bytes()).map_err(|e| e.to_string()),
            };
            if let Err(e) = written {
                let _ = writeln!(err, "error: {e}");
                return EXIT_USAGE;
            }
            done.code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
