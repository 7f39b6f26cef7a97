mod args;
mod commands;
mod config;
mod failure;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::config::FileConfig;
use crate::failure::{CmdResult, Failure};

fn run(cli: Cli) -> CmdResult {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate(args) => commands::simulate(args, &file),
        Command::Extract(args) => commands::extract_cmd(args, &file),
        Command::Estimate(args) => commands::estimate(args, &file),
        Command::Weights(args) => commands::weights(args),
        Command::Evaluate(args) => commands::evaluate(args, &file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
