//! Command-line driver: ground states, property checks, spectra, kicks and
//! resonance widths for the one-dimensional model.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Context;
use config::Config;
use output::{config_hash, RunFlags, Sink};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    NotAMinimum(f64),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::NotAMinimum(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::NotAMinimum(g) => write!(f, "ground state is not a non-degenerate minimum (gamma = {g:e})"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<casida_core::Error> for CliError {
    fn from(e: casida_core::Error) -> Self {
        use casida_core::Error as E;
        match e {
            E::NotAMinimum(g) => CliError::NotAMinimum(g),
            E::InvalidGrid(_) | E::ChannelInvalid(_) => CliError::Config(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "casida", version, about = "Linear-response TDDFT on a 1D soft-Coulomb model")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Drop K0 (coupling 0) in response, checks and resonance runs.
    #[arg(long, global = true, conflicts_with = "delta")]
    no_interaction: bool,
    /// Scale applied to K0.
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Self-consistent ground state: groundstate.json, orbitals.csv.
    Scf,
    /// Operator and propagator invariants: check.json.
    Check,
    /// Frequency response <V_P|chi(omega) V_P>: spectrum.csv.
    Spectrum,
    /// Driven trajectory and kick spectrum: trajectory.csv, kick_signal.csv, spectrum.csv.
    Kick,
    /// Pole and golden-rule widths of one transition: resonance.json.
    Resonance,
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let cfg = Config::load(cli.config.as_deref())?;
    let delta = if cli.no_interaction { 0.0 } else { cli.delta.unwrap_or(1.0) };
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(CliError::Config(format!("--delta: must be non-negative and finite, got {delta}")));
    }
    let flags = RunFlags { seed: cli.seed, delta, no_interaction: cli.no_interaction };
    let sink = Sink::new(&cli.out, config_hash(&cfg, &flags))?;
    let ctx = Context { cfg: &cfg, flags: &flags, sink: &sink };
    match cli.command {
        Command::Scf => commands::scf(&ctx),
        Command::Check => commands::check(&ctx),
        Command::Spectrum => commands::spectrum(&ctx),
        Command::Kick => commands::kick(&ctx),
        Command::Resonance => commands::resonance(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
