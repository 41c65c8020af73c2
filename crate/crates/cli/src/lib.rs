//! Command-line harness: configuration, stage orchestration and
//! deterministic artifacts.

pub mod commands;
pub mod config;
pub mod output;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{
    cmd_check, cmd_drift, cmd_eigensweep, cmd_limit_kappa, cmd_montecarlo, cmd_propagate, CliError, Context,
};
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "kfp", version, about = "Spectral and particle experiments for kinetic Fokker-Planck operators")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output` in the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; FP_THREADS takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Monte Carlo seed; overrides `montecarlo.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Verb,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Verb {
    /// Check the structural assumptions on the equilibrium.
    Check,
    /// Eigenvalue sweep over η and the exponent fit.
    Eigensweep,
    /// Limit problem and the diffusion coefficient.
    LimitKappa,
    /// Drift values across ε.
    Drift,
    /// Per-mode propagation and convergence table.
    Propagate,
    /// Particle simulation and characteristic function.
    Montecarlo,
    /// Consolidated report.
    Report,
}

/// Thread count from FP_THREADS, then `--threads`.
pub fn thread_count(flag: Option<usize>) -> Option<usize> {
    std::env::var("FP_THREADS").ok().and_then(|s| s.trim().parse().ok()).filter(|n: &usize| *n > 0).or(flag)
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    let path = cli.config.clone().ok_or_else(|| CliError::Stage { stage: "config", message: "--config is required".into() })?;
    let cfg = RunConfig::from_path(&path)?;
    let ctx = Context::new(cfg, cli.out.clone(), cli.seed)?;
    let outcome = match cli.command {
        Verb::Check => cmd_check(&ctx)?,
        Verb::Eigensweep => cmd_eigensweep(&ctx)?,
        Verb::LimitKappa => cmd_limit_kappa(&ctx)?,
        Verb::Drift => cmd_drift(&ctx)?,
        Verb::Propagate => cmd_propagate(&ctx)?,
        Verb::Montecarlo => cmd_montecarlo(&ctx)?,
        Verb::Report => report::cmd_report(&ctx)?,
    };
    Ok(outcome.code())
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    if let Some(n) = thread_count(cli.threads) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
