mod args;
mod commands;
mod output;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::commands::Verdict;

const EXIT_VALIDATION: u8 = 2;
const EXIT_GUARD: u8 = 3;
const EXIT_STATISTICAL: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    use qcontrib::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Guard { .. }) => EXIT_GUARD,
        Some(
            E::Invalid(_) | E::Parse(_) | E::Hypothesis(_) | E::ZeroTail { .. } | E::Overflow(_) | E::Io(_),
        ) => EXIT_VALIDATION,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION } else { 0 });
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = commands::run(cli.command, &mut out);
    let _ = out.flush();
    match result {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail(reason)) => {
            eprintln!("statistical check failed: {reason}");
            ExitCode::from(EXIT_STATISTICAL)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
