mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Failure;

fn main() -> ExitCode {
    // clap exits with 2 on usage errors and 0 for --help / --version.
    let cli = Cli::parse();
    let level = if cli.verbose { log::LevelFilter::Debug } else { log::LevelFilter::Info };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();

    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a, cli.seed),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Forecast(a) => commands::forecast(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(Some(doc)) => {
            println!("{doc}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(Failure { code, message }) => {
            eprintln!("{}", serde_json::json!({ "error": code, "message": message }));
            ExitCode::from(1)
        }
    }
}
