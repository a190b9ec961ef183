//! Command-line experiment runner.
//!
//! Every command reads a JSON [`RunConfig`], writes its artifacts into the
//! output directory, and finishes with a `manifest.json` describing the run.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::RunConfig;

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "bridgeforge",
    version,
    about = "Learn diffusion bridge scores and simulate conditioned paths"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a score network and write a checkpoint.
    Train(CommonArgs),
    /// Simulate bridges with a trained or exact score.
    Sample(CommonArgs),
    /// Score-error and endpoint metrics for a checkpoint.
    Evaluate(CommonArgs),
    /// Check adjoint expectations against closed forms.
    AdjointCheck(CommonArgs),
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to `<out>/checkpoint.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: Option<u64>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Sample(_) => "sample",
            Command::Evaluate(_) => "evaluate",
            Command::AdjointCheck(_) => "adjoint-check",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Train(a) | Command::Sample(a) | Command::Evaluate(a) | Command::AdjointCheck(a) => a,
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_path: String,
    config_sha256: String,
    seed: u64,
    workers: Option<u64>,
    started_at: String,
    wall_time_ms: f64,
    artifact_paths: Vec<String>,
    config: &'a RunConfig,
}

fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn fail(context: &str, err: &Error) -> i32 {
    eprintln!("error: {context}: {err}");
    exit_code(err)
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    execute(&cli.command)
}

fn execute(command: &Command) -> i32 {
    let args = command.args();
    let started_at = humantime::format_rfc3339_seconds(SystemTime::now()).to_string();
    let clock = Instant::now();

    let loaded = match RunConfig::load(&args.config) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };
    let mut cfg = loaded.config;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    let out_dir = cfg.output_dir.clone();
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return fail(&format!("creating {}", out_dir.display()), &e.into());
    }
    let checkpoint = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| out_dir.join("checkpoint.json"));

    let body = || match command {
        Command::Train(_) => commands::train(&cfg, &out_dir),
        Command::Sample(_) => commands::sample(&cfg, &checkpoint, &out_dir),
        Command::Evaluate(_) => commands::evaluate(&cfg, &checkpoint, &out_dir),
        Command::AdjointCheck(_) => commands::adjoint_check(&cfg, &out_dir),
    };
    let result = match args.workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n as usize).build() {
            Ok(pool) => pool.install(body),
            Err(e) => {
                eprintln!("error: cannot start {n} workers: {e}");
                return EXIT_CONFIG;
            }
        },
        None => body(),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) => return fail(command.name(), &e),
    };

    let manifest_path = out_dir.join("manifest.json");
    let mut artifact_paths: Vec<String> = outcome.artifacts.iter().map(|p| display(p)).collect();
    artifact_paths.push(display(&manifest_path));
    let manifest = Manifest {
        command: command.name(),
        version: env!("CARGO_PKG_VERSION"),
        config_path: display(&args.config),
        config_sha256: loaded.sha256,
        seed: cfg.seed,
        workers: args.workers,
        started_at,
        wall_time_ms: clock.elapsed().as_secs_f64() * 1e3,
        artifact_paths,
        config: &cfg,
    };
    let written = std::fs::File::create(&manifest_path)
        .map_err(Error::from)
        .and_then(|f| serde_json::to_writer_pretty(f, &manifest).map_err(Error::from));
    if let Err(e) = written {
        return fail("writing manifest", &e);
    }

    match outcome.failure {
        Some(msg) => {
            eprintln!("error: {msg}");
            EXIT_CHECK_FAILED
        }
        None => EXIT_OK,
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
