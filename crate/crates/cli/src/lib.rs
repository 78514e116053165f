//! Command-line front end: configuration loading, run directories and manifests.

pub mod commands;
pub mod config;
pub mod output;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError { code: EXIT_VALIDATION, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError { code: EXIT_NUMERICAL, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError { code: EXIT_IO, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<hydrostat::Error> for CliError {
    fn from(e: hydrostat::Error) -> Self {
        let code = match e {
            _ if e.is_numerical() => EXIT_NUMERICAL,
            hydrostat::Error::Io(_) | hydrostat::Error::Json(_) => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        CliError { code, message: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hydrostat", version, about = "Stochastic hydrostatic Euler / Navier-Stokes experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Run directory (default: <output root>/<command>-<config hash>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Root for run directories when --out is not given.
    #[arg(long, global = true, env = "HYDROSTAT_OUT", default_value = "hydrostat-runs")]
    pub out_root: PathBuf,

    /// Replaces `sim.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// `key=value` with a dotted key, applied after the file is read.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Integrate an ensemble and write its trajectories.
    Simulate,
    /// Residual of the cancellation identity on the initial data.
    Cancellation,
    /// The same integral with the product passed through a spectral projection.
    GalerkinDemo,
    /// Pairwise distances over the projection ladder.
    Cauchy,
    /// Two runs from nearby data under the same noise.
    Uniqueness,
    /// Deviation of d_zz u from its initial value at dt and dt/2.
    Rayleigh,
    /// Ensemble moments of the running supremum of the weighted norm.
    Moments,
    /// Moment growth rates across the artificial-viscosity ladder.
    Uniformity,
    /// Measured constants of the noise growth and Lipschitz bounds.
    VerifyNoise {
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Poincare-type and inverse inequalities for the initial data.
    Poincare,
    /// Checks a configuration without running it.
    Validate,
    /// Re-runs a manifest and compares the artifacts with the recorded hashes.
    Replay {
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Cancellation => "cancellation",
            Command::GalerkinDemo => "galerkin-demo",
            Command::Cauchy => "cauchy",
            Command::Uniqueness => "uniqueness",
            Command::Rayleigh => "rayleigh",
            Command::Moments => "moments",
            Command::Uniformity => "uniformity",
            Command::VerifyNoise { .. } => "verify-noise",
            Command::Poincare => "poincare",
            Command::Validate => "validate",
            Command::Replay { .. } => "replay",
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::validation("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::io(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Replay { manifest } => commands::replay(manifest, cli.out.as_deref(), &cli.out_root),
        Command::Validate => {
            let xcfg = config::load(require_config(&cli)?, &cli.overrides, cli.seed)?;
            commands::validate(&xcfg)
        }
        cmd => {
            let path = require_config(&cli)?;
            let xcfg = config::load(path, &cli.overrides, cli.seed)?;
            let out = cli.out.clone().unwrap_or_else(|| default_run_dir(&cli.out_root, cmd, &xcfg));
            commands::execute(cmd, &xcfg, Some(path), &cli.overrides, &out).map(|_| ())
        }
    }
}

fn require_config(cli: &Cli) -> Result<&Path, CliError> {
    cli.config.as_deref().ok_or_else(|| CliError::validation(format!("{} needs --config", cli.command.name())))
}

pub fn default_run_dir(root: &Path, cmd: &Command, xcfg: &hydrostat::experiments::ExperimentConfig) -> PathBuf {
    root.join(format!("{}-{}", cmd.name(), &xcfg.content_hash()[..12]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_codes() {
        let e: CliError = hydrostat::Error::StabilityBudget { dt: 1.0, budget: 0.5 }.into();
        assert_eq!(e.code, EXIT_NUMERICAL);
        let e: CliError = hydrostat::Error::InvalidConfig("x".into()).into();
        assert_eq!(e.code, EXIT_VALIDATION);
        let e: CliError = hydrostat::Error::Io(std::io::Error::other("x")).into();
        assert_eq!(e.code, EXIT_IO);
    }

    #[test]
    fn command_serde_round_trip() {
        let c = Command::VerifyNoise { samples: 12 };
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, r#"{"name":"verify-noise","samples":12}"#);
        assert_eq!(serde_json::from_str::<Command>(&json).unwrap(), c);
        assert_eq!(serde_json::to_string(&Command::GalerkinDemo).unwrap(), r#"{"name":"galerkin-demo"}"#);
    }

    #[test]
    fn parses_global_flags() {
        let cli = Cli::try_parse_from(["hydrostat", "simulate", "--config", "a.toml", "--override", "sim.dt=0.1", "--override", "sim.s=7", "--seed", "3"]).unwrap();
        assert_eq!(cli.overrides.len(), 2);
        assert_eq!(cli.seed, Some(3));
        assert!(matches!(cli.command, Command::Simulate));
    }
}
