mod args;
mod commands;
mod setup;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Status;

/// 2 for configuration problems anywhere in the cause chain, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|c| {
        c.downcast_ref::<kqlforge::Error>()
            .is_some_and(|e| e.is_config() || matches!(e, kqlforge::Error::Unpriced(_)))
    });
    if config {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help and version go to stdout with status 0, usage errors exit 2
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let c = &cli.common;
    let result = match &cli.command {
        Command::BuildCatalog => commands::build_catalog(c),
        Command::FsdbGen(a) => commands::fsdb_gen(c, a),
        Command::Translate(a) => commands::translate(c, a),
        Command::Eval(a) => commands::eval(c, a),
        Command::Sweep(a) => commands::sweep(c, a),
        Command::Taxonomy(a) => commands::taxonomy(a),
    };
    match result {
        Ok(Status::Clean) => ExitCode::SUCCESS,
        Ok(Status::ItemFailures) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
