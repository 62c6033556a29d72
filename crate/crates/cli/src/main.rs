mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "cemfem", version, about = "Complete electrode model experiments")]
struct Cli {
    /// Output directory [env: CEMFEM_OUT, default: cemfem-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Rerun a config.json written by an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

fn resolve(cli: Cli) -> cemfem::Result<ExperimentConfig> {
    let mut cfg = match (cli.config, cli.command) {
        (Some(_), Some(_)) => {
            return Err(cemfem::Error::Parameter("--config replaces the subcommand; give only one".into()))
        }
        (Some(path), None) => serde_json::from_str::<ExperimentConfig>(&std::fs::read_to_string(path)?)?,
        (None, Some(command)) => ExperimentConfig {
            output: std::env::var_os("CEMFEM_OUT").map_or_else(|| PathBuf::from("cemfem-out"), PathBuf::from),
            seed: 0,
            threads: None,
            command,
        },
        (None, None) => return Err(cemfem::Error::Parameter("a subcommand or --config is required".into())),
    };
    if let Some(out) = cli.out {
        cfg.output = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(cli).and_then(|cfg| commands::run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
