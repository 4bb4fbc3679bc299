//! Command-line driver for the two-scale solver studies.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use tslod::config::ExperimentConfig;
use tslod::studies;

/// Corrected coarse solver for two-scale Helmholtz transmission problems:
/// decay, quasi-optimality, and pollution studies, and single solves.
#[derive(Parser)]
#[command(name = "tslod", version)]
struct Args {
    /// Configuration file; defaults apply for every key it omits
    #[arg(long)]
    config: Option<PathBuf>,
    /// Study override: single, decay, quasiopt, or sweep
    #[arg(long)]
    study: Option<String>,
    /// Output directory override
    #[arg(long)]
    out: Option<PathBuf>,
    /// Oversampling order override: a number, or auto
    #[arg(long)]
    m: Option<String>,
    /// Wave number override
    #[arg(long)]
    k: Option<f64>,
    /// Worker threads for corrector solves; defaults to all cores
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(study) = args.study {
        cfg.study.kind = study;
    }
    if let Some(out) = args.out {
        cfg.study.out = out.display().to_string();
    }
    if let Some(m) = args.m {
        cfg.study.m = m;
    }
    if let Some(k) = args.k {
        cfg.params.k = k;
    }
    cfg.validate()?;
    println!("study {} -> {}", cfg.kind().name(), cfg.study.out);
    let result = studies::run(&cfg)?;
    println!("{} rows written, config {}", result.rows.len(), &result.config_hash[..12]);
    for (name, value) in &result.fits {
        println!("fit {name} = {value:.6}");
    }
    Ok(())
}
