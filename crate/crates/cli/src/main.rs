//! `xr23d`: curate datasets, render DRRs, evaluate predictions, measure
//! morphometry, build reports and generate phantoms.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

mod commands;
mod config;
mod error;

use commands::*;
use config::{effective_toml, resolve, FileConfig, EFFECTIVE_CONFIG};
use error::{io_err, CliError};

#[derive(Debug, Parser)]
#[command(name = "xr23d", version, about = "Biplanar X-ray to 3D bone reconstruction benchmark", arg_required_else_help = true)]
struct Cli {
    /// TOML config; flags and XR23D_* variables take precedence
    #[arg(long, global = true, env = "XR23D_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for splits, bootstrap and phantom noise (default 0)
    #[arg(long, global = true, env = "XR23D_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all cores); outputs do not depend on it
    #[arg(long, global = true, env = "XR23D_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Curate a dataset root into prepared volumes, a manifest and a skip report
    Ingest {
        #[command(flatten)]
        args: IngestArgs,
        #[arg(long, env = "XR23D_OUT")]
        out: PathBuf,
    },
    /// Render AP/LAT radiographs from CT
    Drr {
        #[command(flatten)]
        args: DrrArgs,
        #[arg(long, env = "XR23D_OUT")]
        out: PathBuf,
    },
    /// Score predicted masks against the test split of a manifest
    Eval {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long, env = "XR23D_OUT")]
        out: PathBuf,
    },
    /// Measure clinical parameters of masks
    Morph {
        #[command(flatten)]
        args: MorphArgs,
        #[arg(long, env = "XR23D_OUT")]
        out: PathBuf,
    },
    /// Combine evaluation runs into tables, ranking stability and domain shift
    Report {
        #[command(flatten)]
        args: ReportArgs,
        #[arg(long, env = "XR23D_OUT")]
        out: PathBuf,
    },
    /// Generate synthetic femur, pelvis and vertebra phantoms
    Phantom {
        #[command(flatten)]
        args: PhantomArgs,
        #[arg(long, env = "XR23D_OUT")]
        out: PathBuf,
    },
}

fn echo(command: &str, seed: u64, section: &impl Serialize, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join(EFFECTIVE_CONFIG);
    std::fs::write(&path, effective_toml(command, seed, section)?).map_err(io_err(path))
}

fn run(cli: Cli) -> Result<String, CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let threads = cli.threads.or(file.threads);
    if threads == Some(0) {
        return Err(CliError::Config("--threads must be > 0".into()));
    }
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    eprintln!("seed = {seed}");
    let (name, out, outcome) = match &cli.command {
        Command::Ingest { args, out } => {
            let cfg: IngestSection = resolve("ingest", &file, args)?;
            let cfg = cfg.finalize();
            echo("ingest", seed, &cfg, out)?;
            ("ingest", out, run_ingest(&cfg, seed, out)?)
        }
        Command::Drr { args, out } => {
            let cfg: DrrSection = resolve("drr", &file, args)?;
            echo("drr", seed, &cfg, out)?;
            ("drr", out, run_drr(&cfg, out)?)
        }
        Command::Eval { args, out } => {
            let cfg: EvalSection = resolve("eval", &file, args)?;
            let cfg = cfg.finalize();
            echo("eval", seed, &cfg, out)?;
            ("eval", out, run_eval(&cfg, out)?)
        }
        Command::Morph { args, out } => {
            let cfg: MorphSection = resolve("morph", &file, args)?;
            echo("morph", seed, &cfg, out)?;
            ("morph", out, run_morph(&cfg, out)?)
        }
        Command::Report { args, out } => {
            let cfg: ReportSection = resolve("report", &file, args)?;
            echo("report", seed, &cfg, out)?;
            ("report", out, run_report(&cfg, seed, out)?)
        }
        Command::Phantom { args, out } => {
            let cfg: PhantomSection = resolve("phantom", &file, args)?;
            echo("phantom", seed, &cfg, out)?;
            ("phantom", out, run_phantom(&cfg, seed, out)?)
        }
    };
    Ok(format!("{name}: {} -> {}", outcome.summary, out.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
