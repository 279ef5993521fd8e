use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = lfinet_cli::Cli::parse();
    match lfinet_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
