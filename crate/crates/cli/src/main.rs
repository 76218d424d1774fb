//! `levyspx`: filter and summarize option quotes, generate synthetic quotes,
//! price, calibrate, evaluate and run sensitivity sweeps.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use crate::commands::Command;

#[derive(Debug, Parser)]
#[command(name = "levyspx", version, about = "European index call pricing and model calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Malformed or inconsistent input data and configuration (exit code 2).
#[derive(Debug)]
pub struct DataError(pub String);

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

/// Bad flags or unsupported requests (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use levyspx::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() {
            return 1;
        }
        if cause.is::<DataError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io { .. } | E::Unsupported(_) => 1,
                E::MalformedRow { .. } | E::Schema { .. } | E::InvalidParameter { .. } | E::Json(_) | E::Csv(_) => 2,
                _ => 3,
            };
        }
    }
    1
}

/// The error chain joined by `: `, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let part = cause.to_string();
        if !text.contains(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
