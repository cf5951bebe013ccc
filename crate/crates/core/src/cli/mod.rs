//! Command-line front end: config parsing, the four subcommands and run manifests.

mod commands;
mod config;
mod manifest;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::meanfield::Scheme;

pub use commands::{cmd_capacitance_dump, cmd_flow, cmd_particles, CommandOutcome};
pub use config::{
    parse_config, parse_config_str, CapacitanceConfig, ControlConfig, DomainConfig, FlowConfig, GridConfig,
    InitialConfig, OutputConfig, ParticlesConfig, PhysicsConfig, RunConfig, MAX_NODES_PER_AXIS,
};
pub use manifest::{sha256_hex, Artifacts, FileRecord, RunManifest};
pub use validate::{cmd_validate, run_suite, CheckResult, ValidateOptions, ValidationReport};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "MEANFIELD_THREADS";

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_INVARIANT: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "chiplet-meanfield", version, about = "Mean-field chiplet population simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve the density with the proximal or explicit scheme and check energy decay.
    Flow(RunArgs),
    /// Simulate the particle system and compare it against the grid density.
    Particles(RunArgs),
    /// Run the built-in invariant suite and print a JSON report.
    Validate(ValidateArgs),
    /// Export the capacitance kernels as `r,value` CSV.
    CapacitanceDump(DumpArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON config; omitted means all defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Time-stepping scheme (overrides `flow.scheme`).
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<Scheme>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Also write `validate_report.json` into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Test hook: reverse the interaction drift so the energy checks must fail.
    #[arg(long, hide = true)]
    pub inject_drift_flip: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Largest separation to tabulate, in mm.
    #[arg(long, default_value_t = 2.0)]
    pub r_max: f64,
    #[arg(long, default_value_t = 201)]
    pub samples: usize,
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    match s {
        "jko" => Ok(Scheme::Jko),
        "explicit_fd" | "explicit-fd" => Ok(Scheme::ExplicitFd),
        other => Err(format!("unknown scheme `{other}` (expected `jko` or `explicit_fd`)")),
    }
}

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Validation(_) | Error::Domain(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Convergence { .. } | Error::Numerical(_) | Error::NumericalBlowup { .. } | Error::Capacity { .. } => {
            EXIT_SOLVER
        }
        Error::Io(_) => EXIT_IO,
    }
}

/// Load the config for a run and apply command-line overrides.
pub fn resolve_config(args: &RunArgs) -> crate::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(scheme) = args.scheme {
        cfg.flow.scheme = scheme;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Apply `MEANFIELD_THREADS` to the global pool. Only the first call in a process has an effect.
pub fn configure_threads() -> crate::Result<usize> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(rayon::current_num_threads());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::config(THREADS_ENV, format!("must be a positive integer, got `{raw}`")))?;
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("thread pool already initialised; {THREADS_ENV} ignored");
    }
    Ok(rayon::current_num_threads())
}

fn dispatch(cli: Cli) -> crate::Result<CommandOutcome> {
    match cli.command {
        Command::Flow(args) => cmd_flow(&resolve_config(&args)?),
        Command::Particles(args) => cmd_particles(&resolve_config(&args)?),
        Command::Validate(args) => cmd_validate(&ValidateOptions {
            out: args.out,
            flip_drift: args.inject_drift_flip,
        }),
        Command::CapacitanceDump(args) => {
            let run = RunArgs {
                config: args.config,
                out: args.out,
                seed: None,
                scheme: None,
            };
            cmd_capacitance_dump(&resolve_config(&run)?, args.r_max, args.samples)
        }
    }
}

/// Run a parsed command line and map the result to an exit status.
pub fn run(cli: Cli) -> ExitCode {
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    match dispatch(cli) {
        Ok(outcome) => {
            if !outcome.invariants_passed {
                eprintln!("invariant check failed: {}", outcome.summary);
                return ExitCode::from(EXIT_INVARIANT);
            }
            // status goes to stderr so stdout carries only data (the validate report)
            eprintln!("{}", outcome.summary);
            ExitCode::from(EXIT_OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
