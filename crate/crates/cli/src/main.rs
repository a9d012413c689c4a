use std::process::ExitCode;

use clap::{error::ErrorKind, CommandFactory, Parser};
use kgqa_cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.command.needs_config() && cli.config.is_none() {
        Cli::command()
            .error(ErrorKind::MissingRequiredArgument, "--config <FILE> is required for this command")
            .exit();
    }
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start the async runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut err = std::io::stderr();
    match runtime.block_on(kgqa_cli::run(cli, &mut out, &mut err)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
