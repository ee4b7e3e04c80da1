use std::process::ExitCode;

use clap::Parser;
use msims_testbed::cli::{execute, Cli};

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("msims: {}", e.one_line());
            ExitCode::FAILURE
        }
    }
}
