//! Command-line front-end: configuration loading, subcommands and output
//! files. The binary in `main.rs` is a thin wrapper around [`run`].

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] mfpc_core::Error),
    #[error("mean-field iteration stopped after {iterations} iterations with residual {residual:.3e} (tol {tol:.1e})")]
    NotConverged { iterations: usize, residual: f64, tol: f64 },
    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    /// 2: bad input, 3: numerical failure, 4: failed checks, 1: i/o.
    pub fn exit_code(&self) -> u8 {
        use mfpc_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::Config(_) | E::Domain(_) | E::Infeasible { .. } | E::Stability { .. }) => 2,
            CliError::Core(E::RootFinding(_) | E::NonFinite { .. } | E::NegativeDensity { .. }) => 3,
            CliError::NotConverged { .. } => 3,
            CliError::ChecksFailed { .. } => 4,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mfpc", version, about = "Mean-field power control solvers")]
pub struct Cli {
    /// TOML run configuration (flat dotted keys); defaults are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `sim.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Closed-form static Nash equilibrium for `static.gains`.
    StaticNe,
    /// Channel ensemble statistics against the exact transient law.
    SimulateChannel,
    /// Single-player value function and policy under constant interference.
    SolveSingle,
    /// Off-probability sweep over the energy shadow price.
    OffProbability,
    /// K-player simulation, plus the convergence table when `sim.k_list` is set.
    SimulateK,
    /// Mean-field equilibrium by damped fixed-point iteration.
    SolveMfg,
    /// Invariant checks on the configured scenario.
    Check,
    /// Print the resolved configuration as flat TOML.
    ShowConfig,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::StaticNe => "static-ne",
            Command::SimulateChannel => "simulate-channel",
            Command::SolveSingle => "solve-single",
            Command::OffProbability => "off-probability",
            Command::SimulateK => "simulate-k",
            Command::SolveMfg => "solve-mfg",
            Command::Check => "check",
            Command::ShowConfig => "show-config",
        }
    }
}

/// Resolves the configuration from the file, the environment and the flags.
pub fn resolve_config<I>(cli: &Cli, vars: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut cfg = RunConfig::load(cli.config.as_deref(), vars)?;
    if let Some(out) = &cli.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    Ok(cfg)
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn run<I, T>(args: I, vars: impl IntoIterator<Item = (String, String)>) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = resolve_config(&cli, vars).and_then(|cfg| commands::execute(cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
