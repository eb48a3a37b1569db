use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(annokit_cli::run(annokit_cli::Cli::parse()))
}
