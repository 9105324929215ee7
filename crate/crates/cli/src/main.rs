//! `renyi` batch front-end.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use log::error;

#[derive(Parser)]
#[command(version, about = "Maximal Renyi ensembles: exact sweeps, Gaussian density of states, uniform-MPS optimization and nonlinear evolution")]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` (and `seeds` for umps-optimize).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to RENYI_NUM_THREADS, then `threads`.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(short, long)]
    verbose: bool,
}

fn threads(flag: Option<usize>, file: Option<usize>) -> Result<usize> {
    if let Some(k) = flag {
        return Ok(k.max(1));
    }
    if let Ok(v) = std::env::var("RENYI_NUM_THREADS") {
        let k: usize = v.trim().parse().with_context(|| format!("RENYI_NUM_THREADS = {v:?} is not a count"))?;
        return Ok(k.max(1));
    }
    Ok(file.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let setup = || -> Result<(config::ExperimentConfig, usize)> {
        let text = std::fs::read_to_string(&cli.config)
            .with_context(|| format!("reading {}", cli.config.display()))?;
        let mut cfg = config::parse_config(&text)?;
        cfg.apply_overrides(cli.out.clone(), cli.seed);
        let k = threads(cli.threads, cfg.threads)?;
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global()?;
        Ok((cfg, k))
    };
    let (cfg, k) = match setup() {
        Ok(v) => v,
        Err(e) => {
            error!("{e:#}");
            return ExitCode::from(2);
        }
    };
    match run::run(&cfg, k) {
        Ok(cells) if cells.iter().all(|c| c.ok) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
