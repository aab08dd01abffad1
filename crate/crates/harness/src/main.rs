use std::process::ExitCode;

use clap::Parser;
use mia_harness::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = cli.command.stage().name();
    match execute(&cli) {
        Ok(manifest) => {
            eprintln!("{stage}: wrote {} files", manifest.files.len() + 1);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mia-audit: stage `{stage}` failed: {e:#}");
            ExitCode::FAILURE
        }
    }
}
