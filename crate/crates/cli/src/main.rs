//! `seqauction` command-line front end.
//!
//! Exit status: 0 when every check passes (rows labeled `expected-fail` are
//! ignored), 1 when a check fails, 2 on usage or configuration errors.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{CommandId, ExperimentConfig};

#[derive(Parser)]
#[command(name = "seqauction", version, about = "Revenue experiments for sequential multi-stage auctions")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON experiment config; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write CSV here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// LP solver tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Scan cap for `cc`; nonzero cap for LP builds in `opt-solve` and `duality`.
    #[arg(long, global = true)]
    cap: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Expected order statistics E[X(r:n)] over a grid of (r, n).
    DistStats,
    /// Solve the dynamic-mechanism LP and verify the solution.
    OptSolve,
    /// Canonical dual flows: conservation residual, bound and gap to the LP.
    Duality,
    /// Competition-complexity scans.
    Cc,
    /// Order-statistic bounds for MHR distributions.
    MhrVerify,
    /// Run every acceptance check.
    ReproducePaper,
}

impl Cmd {
    fn id(self) -> CommandId {
        match self {
            Self::DistStats => CommandId::DistStats,
            Self::OptSolve => CommandId::OptSolve,
            Self::Duality => CommandId::Duality,
            Self::Cc => CommandId::Cc,
            Self::MhrVerify => CommandId::MhrVerify,
            Self::ReproducePaper => CommandId::ReproducePaper,
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.seed = cli.seed.or(cfg.seed);
    cfg.tol = cli.tol.or(cfg.tol);
    cfg.cap = cli.cap.or(cfg.cap);
    cfg.out = cli.out.clone().or(cfg.out);
    cfg.validate_for(cli.command.id())?;
    Ok(cfg)
}

fn run(cmd: Cmd, cfg: &ExperimentConfig) -> Result<commands::Output> {
    match cmd {
        Cmd::DistStats => commands::dist_stats(cfg),
        Cmd::OptSolve => commands::opt_solve(cfg),
        Cmd::Duality => commands::duality(cfg),
        Cmd::Cc => commands::cc(cfg),
        Cmd::MhrVerify => commands::mhr_verify(cfg),
        Cmd::ReproducePaper => commands::reproduce(cfg),
    }
}

fn emit(cfg: &ExperimentConfig, csv: &str) -> Result<()> {
    match &cfg.out {
        Some(path) => std::fs::write(path, csv).with_context(|| format!("writing {}", path.display())),
        None => std::io::stdout().write_all(csv.as_bytes()).context("writing stdout"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("usage error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = run(cli.command, &cfg).and_then(|out| emit(&cfg, &out.csv).map(|()| out.failures));
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} check(s) failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
