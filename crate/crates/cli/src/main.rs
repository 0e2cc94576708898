//! `stopflow`: closed forms, policy iteration, simulation and learning for
//! the entropy-regularized real-option stopping problem.

// `!(a < b)` is how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde::{Deserialize, Serialize};

use commands::{execute, Command, Ctx};
use config::{parse_config, resolve_params, ParamFlags};
use error::CliError;
use report::{Outputs, ParamsRecord};

const DEFAULT_SEED: u64 = 42;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "stopflow", version, about)]
struct Cli {
    /// Parameter file with `key = value` lines (mu, sigma, rho, kappa, lambda, theta, seed).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(flatten)]
    params: ParamFlags,
    #[command(subcommand)]
    command: Command,
}

/// Everything needed to re-run a command.
#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    command: String,
    version: String,
    params: ParamsRecord,
    seed: u64,
    threads: Option<usize>,
    invocation: Command,
    artifacts: Vec<String>,
    wall_clock_seconds: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            // A closed pipe (`| head`) is not an error.
            let _ = writeln!(std::io::stdout(), "{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Command::Replay(r) = &cli.command {
        return replay(&r.manifest, cli.out_dir.as_deref(), cli.threads);
    }
    let file = match &cli.config {
        Some(p) => Some(parse_config(&std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?)?),
        None => None,
    };
    let params = resolve_params(file.as_ref(), &cli.params)?;
    params.validate()?;
    let seed = cli.seed.or(file.as_ref().and_then(|f| f.seed)).unwrap_or(DEFAULT_SEED);
    let out_dir = cli.out_dir.unwrap_or_else(|| PathBuf::from("stopflow-out").join(cli.command.name()));
    let ctx = Ctx { params, seed };
    run_command(cli.command, &ctx, &out_dir, cli.threads)
}

fn run_command(command: Command, ctx: &Ctx, out_dir: &Path, threads: Option<usize>) -> Result<String, CliError> {
    let mut out = Outputs::new(out_dir)?;
    let start = Instant::now();
    let summary = execute(&command, ctx, &mut out)?;
    let manifest = Manifest {
        command: command.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        params: ctx.params.into(),
        seed: ctx.seed,
        threads,
        invocation: command,
        artifacts: out.files.clone(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    out.write(MANIFEST, &serde_json::to_string_pretty(&manifest)?)?;
    Ok(format!("{summary}\nwrote {} files to {}", out.files.len(), out.dir().display()))
}

fn replay(path: &Path, out_dir: Option<&Path>, threads: Option<usize>) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let ctx = Ctx {
        params: m.params.into(),
        seed: m.seed,
    };
    let default_dir = path.parent().unwrap_or(Path::new(".")).join("replay");
    let dir = out_dir.map(Path::to_path_buf).unwrap_or(default_dir);
    run_command(m.invocation, &ctx, &dir, threads.or(m.threads))
}
