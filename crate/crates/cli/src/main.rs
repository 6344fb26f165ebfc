use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gcdlab_cli::config::parse_config;
use gcdlab_cli::embeddings::write_embeddings;
use gcdlab_cli::experiment::{load_dataset, run_experiment};
use gcdlab_cli::report::emit_report;

#[derive(Parser)]
#[command(name = "gcdlab", version, about = "Generalized category discovery lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every point of the config's sweep grid.
    Run { config: PathBuf },
    /// Render charts and a comparison table from run directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Check a config and print its canonical form.
    Validate { config: PathBuf },
    /// Write the config's dataset as an embedding CSV.
    GenData {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = parse_config(&config)?;
            let outcome = run_experiment(&cfg)?;
            let failed = outcome.failures();
            log::info!("summary written to {}", outcome.summary_path.display());
            if failed > 0 {
                log::error!("{failed} of {} run(s) failed", outcome.runs.len());
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report { dirs, out } => {
            let r = emit_report(&dirs, &out)?;
            for f in &r.files {
                println!("{}", f.display());
            }
            if r.skipped > 0 {
                log::warn!("{} input(s) skipped", r.skipped);
            }
        }
        Command::Validate { config } => {
            let cfg = parse_config(&config)?;
            print!("{}", cfg.to_toml());
            log::info!("{} run(s) in grid", cfg.grid().len());
        }
        Command::GenData { config, out } => {
            let cfg = parse_config(&config)?;
            let ds = load_dataset(&cfg, cfg.seed)?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_embeddings(BufWriter::new(file), &ds)?;
            log::info!("{} samples written to {}", ds.len(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
