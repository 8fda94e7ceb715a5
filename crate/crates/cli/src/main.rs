//! `ipde-hjb <solve|study|check> --config <path> [--out <dir>] [--threads <n>]`

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{parse_entries, RunConfig};
use run::{Command, RunError};

#[derive(Parser)]
#[command(name = "ipde-hjb", version, about = "Semi-Lagrangian solver for nonlocal HJB equations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Flat `section.key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to IPDE_HJB_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Preset name; overrides `problem.preset`.
    #[arg(long = "case")]
    case: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the discrete Bellman equation and write solution.txt.
    Solve(Common),
    /// Run a convergence study and write study.csv.
    Study(Common),
    /// Run the invariant suite and write check.txt.
    Check(Common),
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn load(common: &Common) -> Result<RunConfig, RunError> {
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.clone(),
            source,
        })?,
        None => String::new(),
    };
    let mut entries = parse_entries(&text)?;
    if let Some(case) = &common.case {
        entries.insert("problem.preset".into(), case.clone());
    }
    Ok(RunConfig::from_entries(entries)?)
}

fn threads(common: &Common) -> Result<Option<usize>, String> {
    if let Some(n) = common.threads {
        return if n > 0 { Ok(Some(n)) } else { Err("--threads must be positive".into()) };
    }
    match std::env::var("IPDE_HJB_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("IPDE_HJB_THREADS must be a positive integer, got `{s}`")),
        },
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, common) = match &cli.command {
        Cmd::Solve(c) => (Command::Solve, c),
        Cmd::Study(c) => (Command::Study, c),
        Cmd::Check(c) => (Command::Check, c),
    };
    match threads(common) {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_FAIL);
            }
        }
        Ok(None) => {}
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let cfg = match load(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(match e {
                RunError::Config(_) => EXIT_CONFIG,
                _ => EXIT_FAIL,
            });
        }
    };
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    match run::run(command, &cfg, &out) {
        Ok(report) => {
            print!("{}", report.stdout);
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                RunError::Config(_) => EXIT_CONFIG,
                _ => EXIT_FAIL,
            })
        }
    }
}
