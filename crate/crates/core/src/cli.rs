//! Command-line front end of the `ethkick` binary.
//!
//! Exit codes: 0 on success (and for `--help`), 1 for usage errors, unreadable
//! or invalid spec files, 2 when a numerical stage fails.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiments::{self, ExperimentSpec, Report};
use crate::linalg::EigenCache;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Environment variable naming the eigensystem cache directory.
pub const CACHE_ENV: &str = "ETHKICK_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "ethkick", version, about = "Energy change of closed quantum systems under kicks and finite pulses")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment spec (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub spec: Option<PathBuf>,
    /// Output directory for CSV tables and the JSON summary.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    /// Eigensystem cache directory.
    #[arg(long, global = true, value_name = "DIR", env = CACHE_ENV)]
    pub cache: Option<PathBuf>,
    /// Overrides the seed in the spec.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spectrum summary, level-spacing ratio and effective temperatures.
    ModelInfo,
    /// Diagonal and off-diagonal ETH statistics of the observable.
    EthStats,
    /// Spectral function and retarded Green's function of a stationary state.
    Spectral,
    /// Exact kick, all-orders series convention and truncated series.
    Kick,
    /// Linear response against exact pulse evolution on an amplitude ladder.
    Pulse,
    /// Suppression-ratio scaling with system size, chaotic vs integrable.
    Scaling,
    /// Inspect or clear the eigensystem cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    List,
    Clear,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Output goes to `stdout`, diagnostics to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    init_logging(cli.global.verbose);
    match execute(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            let _ = writeln!(stderr, "error: {}", failure.message);
            failure.code
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_usage() { EXIT_USAGE } else { EXIT_NUMERICAL };
        Self { code, message: e.to_string() }
    }
}

fn load_spec(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentSpec, Failure> {
    let path = path.ok_or_else(|| Failure::usage("this command needs --spec <PATH>"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read spec file {}: {e}", path.display())))?;
    let mut spec = ExperimentSpec::from_json(&text)
        .map_err(|e| Failure::usage(format!("invalid spec file {}: {e}", path.display())))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    let g = &cli.global;
    if g.threads == 0 {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    let cache = g.cache.as_ref().map(EigenCache::new);
    if let Command::Cache { action } = &cli.command {
        let cache = cache.ok_or_else(|| Failure::usage(format!("no cache directory: pass --cache or set {CACHE_ENV}")))?;
        return match action {
            CacheAction::List => {
                for (path, header) in cache.list()? {
                    let _ = writeln!(stdout, "{}\tdim={}\t{}", path.display(), header.dim, header.model);
                }
                Ok(())
            }
            CacheAction::Clear => {
                let removed = cache.clear()?;
                let _ = writeln!(stdout, "removed {removed} cached eigensystem(s) from {}", cache.dir().display());
                Ok(())
            }
        };
    }

    let spec = load_spec(g.spec.as_deref(), g.seed)?;
    let study: fn(&ExperimentSpec, Option<&EigenCache>) -> Result<Report> = match cli.command {
        Command::ModelInfo => experiments::run_model_info,
        Command::EthStats => experiments::run_eth_study,
        Command::Spectral => experiments::run_spectral_study,
        Command::Kick => experiments::run_kick_study,
        Command::Pulse => experiments::run_response_study,
        Command::Scaling => experiments::run_scaling_study,
        Command::Cache { .. } => unreachable!("handled above"),
    };
    let report = experiments::with_threads(g.threads, || study(&spec, cache.as_ref()))??;
    for path in report.write(&g.out)? {
        let _ = writeln!(stdout, "{}", path.display());
    }
    Ok(())
}
