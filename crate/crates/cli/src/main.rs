use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use sli_cli::{dispatch, parse_config, Command};

/// Stochastic local intensity simulator.
#[derive(Debug, Parser)]
#[command(name = "sli", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `engine.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the parallel paths.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = parse_config(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.engine.seed = s;
    }
    for d in cfg.defaults_applied() {
        eprintln!("note: {d}");
    }
    let summary = dispatch(cli.command, &cfg, &cli.out, cli.threads)?;
    println!("{summary}");
    Ok(())
}
