mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::config::{Cli, RunConfig};
use crate::error::{CliError, CliResult};

fn run(cli: Cli) -> CliResult<()> {
    let name = cli.command.name();
    let flags = cli.command.flags();
    let cfg = match &flags.run_config {
        Some(path) => {
            let cfg = RunConfig::from_output(path)?;
            if cfg.command != name {
                return Err(CliError::Usage(format!(
                    "{} holds a '{}' configuration, not '{name}'",
                    path.display(),
                    cfg.command
                )));
            }
            cfg
        }
        None => RunConfig::from_flags(name, flags)?,
    };
    let out = flags.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match name {
        "wv" => commands::cmd_wv(&cfg, &out),
        "fit" => commands::cmd_fit(&cfg, &out),
        "outliers" => commands::cmd_outliers(&cfg, &out),
        _ => commands::cmd_simulate(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
