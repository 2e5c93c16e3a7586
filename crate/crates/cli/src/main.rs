mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::commands::{Outcome, Run};
use crate::config::{Format, RunConfig};
use crate::report::Emitter;

/// Overrides the configured output directory; `--out` still wins.
const OUT_ENV: &str = "FPPLAB_OUT";

#[derive(Parser)]
#[command(name = "fpplab", version, about = "First-passage percolation experiments")]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

fn parse_point(s: &str) -> Result<[i64; 2], String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let parse = |t: &str| t.trim().parse::<i64>().map_err(|e| e.to_string());
    Ok([parse(x)?, parse(y)?])
}

#[derive(Subcommand)]
enum Command {
    /// Sample an environment and write it to `environment.json`.
    Sample {
        /// Half-width of the box.
        #[arg(long)]
        r: Option<i64>,
    },
    /// Passage time and geodesic between two points of an environment file.
    Pt {
        env: Option<PathBuf>,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        from: Option<[i64; 2]>,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        to: Option<[i64; 2]>,
    },
    /// Time-constant table.
    Shape,
    /// Multi-scale stability scan.
    StabilityScan { env: Option<PathBuf> },
    /// Projected passage-time table and its signature.
    Project { env: Option<PathBuf> },
    /// Dilated environment and its verification.
    Dilate,
    /// Regularise, scale down and compare random paths in the dilated grid.
    Paths,
    /// Tail probability estimates.
    Estimate,
    /// Shift conditioned samples upward and check the event persists.
    Continuity,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sample { .. } => "sample",
            Command::Pt { .. } => "pt",
            Command::Shape => "shape",
            Command::StabilityScan { .. } => "stability-scan",
            Command::Project { .. } => "project",
            Command::Dilate => "dilate",
            Command::Paths => "paths",
            Command::Estimate => "estimate",
            Command::Continuity => "continuity",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.bind_command(cli.command.name())?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    if cli.format.is_some() {
        cfg.format = cli.format;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    } else if let Some(dir) = std::env::var_os(OUT_ENV) {
        cfg.out = Some(dir.into());
    }
    match &cli.command {
        Command::Sample { r: Some(r) } => cfg.sample.r = *r,
        Command::Pt { env, from, to } => {
            if env.is_some() {
                cfg.pt.env = env.clone();
            }
            if let Some(p) = from {
                cfg.pt.from = *p;
            }
            if let Some(p) = to {
                cfg.pt.to = *p;
            }
        }
        Command::StabilityScan { env: Some(e) } => cfg.stability.env = Some(e.clone()),
        Command::Project { env: Some(e) } => cfg.projection.env = Some(e.clone()),
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = resolve(cli)?;
    if let Some(w) = cfg.workers {
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().context("configuring worker threads")?;
    }
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("fpplab-out"));
    let emit = Emitter::new(dir, cli.command.name(), cfg.hash(), cfg.seed())?;
    let run = Run { config: &cfg, format: cfg.format.unwrap_or(Format::Json), emit };
    match cli.command {
        Command::Sample { .. } => run.sample(),
        Command::Pt { .. } => run.pt(),
        Command::Shape => run.shape(),
        Command::StabilityScan { .. } => run.stability_scan(),
        Command::Project { .. } => run.project(),
        Command::Dilate => run.dilate(),
        Command::Paths => run.paths(),
        Command::Estimate => run.estimate(),
        Command::Continuity => run.continuity(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(Outcome { verdict: Some(false) }) => {
            eprintln!("verdict failed");
            ExitCode::from(2)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
