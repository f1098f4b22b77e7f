//! `mrlrec` command-line driver.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::commands::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            eprintln!("{}", commands::usage_error_json(&e));
            return ExitCode::from(2);
        }
    };
    let raw: Vec<String> = std::env::args().skip(1).collect();
    match commands::run(cli, &raw) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", commands::error_json(&err));
            ExitCode::FAILURE
        }
    }
}
