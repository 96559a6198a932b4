mod args;
mod config;
mod io;
mod report;
mod run;
mod train;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Marks errors caused by invalid invocation rather than bad data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => train::train(a),
        Command::Query(a) => train::query(a),
        Command::Run(a) => run::run(a).map(|_| ()),
        Command::Compare(a) => report::compare(a),
        Command::Analyze(a) => report::analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
