use std::process::ExitCode;

use clap::Parser;
use gcsam_cli::{execute, exit_code, report_error, Cli};

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors are validation failures, not numerical aborts
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli.command, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            report_error(&cli.command.common().out, &err);
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
