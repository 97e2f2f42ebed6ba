//! `rawforge`: pattern generation, alignment, kernel and noise calibration,
//! training-pair synthesis and evaluation from one entry point.

mod cmd;
mod config;
mod error;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use config::{Echo, Resolved, Settings};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "rawforge", version, about = "Device-specific SR kernel and noise calibration, RAW pair synthesis and evaluation")]
#[command(propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct GlobalArgs {
    /// JSON config file; its keys (or its section named after the subcommand) set defaults below the flags
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Global random seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Write the JSON report here instead of stdout
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render display patterns as numbered 16-bit PNG frames plus a manifest
    GenPatterns(cmd::gen_patterns::Args),
    /// Decode Gray-code captures into a homography and align ground truth to RAW captures
    Align(cmd::align::Args),
    /// Estimate per-patch SR kernels from pattern/burst pairs
    CalibrateKernels(cmd::kernels::Args),
    /// Fit heteroscedastic noise parameters and their ISO curves from bursts
    CalibrateNoise(cmd::noise::Args),
    /// Synthesize LR RAW / HR RGB training pairs from calibrated degradations
    Synthesize(cmd::synthesize::Args),
    /// Measure Siemens-star MTF or paired PSNR/SSIM
    Evaluate(cmd::evaluate::Args),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenPatterns(_) => "gen-patterns",
            Command::Align(_) => "align",
            Command::CalibrateKernels(_) => "calibrate-kernels",
            Command::CalibrateNoise(_) => "calibrate-noise",
            Command::Synthesize(_) => "synthesize",
            Command::Evaluate(_) => "evaluate",
        }
    }
}

/// Per-invocation context handed to every subcommand.
pub struct Ctx {
    pub command: &'static str,
    pub global: GlobalArgs,
}

impl Ctx {
    /// Layers defaults, the config file and the flags in `args` into `T`.
    pub fn resolve<T: Settings>(&self, args: &impl Serialize) -> CliResult<Resolved<T>> {
        let g = &self.global;
        config::resolve(self.command, g.config.as_deref(), args, &[("seed", g.seed.map(Value::from)), ("workers", g.workers.map(Value::from))])
    }

    /// Runs `f` on a pool of `workers` threads.
    pub fn in_pool<R: Send>(&self, workers: usize, f: impl FnOnce() -> CliResult<R> + Send) -> CliResult<R> {
        if workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        let pool =
            rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
        pool.install(f)
    }

    /// Emits the report envelope to `--out` or stdout, and as `run.json`
    /// inside `run_dir` when the command writes a directory.
    pub fn emit<R: Serialize>(&self, echo: &BTreeMap<String, Echo>, result: &R, run_dir: Option<&Path>) -> CliResult<()> {
        let report = RunReport { command: self.command, version: env!("CARGO_PKG_VERSION"), config: echo, result };
        if let Some(dir) = run_dir {
            rawforge::io::write_json(&dir.join("run.json"), &report)?;
        }
        match &self.global.out {
            Some(path) => rawforge::io::write_json(path, &report)?,
            None => {
                let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
                println!("{text}");
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct RunReport<'a, R> {
    command: &'a str,
    version: &'a str,
    config: &'a BTreeMap<String, Echo>,
    result: &'a R,
}

fn run(cli: Cli) -> CliResult<()> {
    let ctx = Ctx { command: cli.command.name(), global: cli.global };
    match cli.command {
        Command::GenPatterns(a) => cmd::gen_patterns::run(&ctx, a),
        Command::Align(a) => cmd::align::run(&ctx, a),
        Command::CalibrateKernels(a) => cmd::kernels::run(&ctx, a),
        Command::CalibrateNoise(a) => cmd::noise::run(&ctx, a),
        Command::Synthesize(a) => cmd::synthesize::run(&ctx, a),
        Command::Evaluate(a) => cmd::evaluate::run(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RAWFORGE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version print to stdout with status 0; usage errors exit 2
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Missing(_) = e {
                let mut command = Cli::command();
                if let Some(sub) = command.find_subcommand_mut(name) {
                    let usage = sub.render_usage().to_string();
                    eprintln!("\n{}", usage.replacen(name, &format!("rawforge {name}"), 1));
                    eprintln!("For more information, try 'rawforge {name} --help'.");
                }
            }
            e.exit_code()
        }
    }
}
