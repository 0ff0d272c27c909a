use std::process::ExitCode;

use clap::Parser;
use personarank_cli::args::{Cli, Command};
use personarank_cli::commands::{config_json, resolve_config, run};
use personarank_cli::error::CliError;
use personarank_cli::service;

fn execute(cli: &Cli) -> Result<serde_json::Value, CliError> {
    let cfg = resolve_config(cli)?;
    println!("{}", config_json(&cfg));
    match cli.command {
        Command::Serve { .. } => service::run(&cfg, cli.mock_llm),
        _ => run(cli, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(result) => {
            println!("{}", serde_json::json!({ "result": result }));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
