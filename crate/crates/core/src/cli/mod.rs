//! Command-line front end.

mod commands;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::channel::PolarizationMode;
use crate::config::{ExperimentConfig, Mode};
use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mcf-qkd", version, about = "Multicore-fiber 4D QKD link simulator and key-rate analysis")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "MCF_QKD_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Monte Carlo pulse budget, e.g. 1e7.
    #[arg(long, global = true, value_parser = parse_count)]
    pub pulses: Option<u64>,
    /// Output file; relative paths go under MCF_QKD_OUT_DIR when it is set.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "MCF_QKD_OUT_DIR", hide_env_values = true)]
    pub out_dir: Option<PathBuf>,
    /// Run internal validity checks; exit 3 if any fails.
    #[arg(long, global = true)]
    pub check: bool,
    /// Six significant digits and kbit/s rates.
    #[arg(long, global = true)]
    pub pretty: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// QBERs and key rates at the published operating points.
    Table1 {
        /// Restrict to these channel losses, dB.
        #[arg(long)]
        loss: Vec<f64>,
        /// Monte Carlo only: write each session's tally CSV into this directory.
        #[arg(long)]
        tallies: Option<PathBuf>,
    },
    /// Optimized key rate versus channel loss.
    Sweep {
        #[arg(long, default_value_t = 5.8)]
        from: f64,
        #[arg(long, default_value_t = 25.8)]
        to: f64,
        #[arg(long, default_value_t = 4.0)]
        step: f64,
    },
    /// Windowed QBER of a long single-basis run.
    Stability {
        #[arg(long)]
        duration: Option<f64>,
        /// Also write every loop update to this CSV.
        #[arg(long)]
        telemetry: Option<PathBuf>,
    },
    /// Stabilization-channel counts under a phase ramp.
    Fringes {
        /// Polarization of the reference; both when omitted.
        #[arg(long, value_enum)]
        polarization: Option<Polarization>,
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
    },
    /// Source settings maximizing the key rate at one channel loss.
    Optimize {
        /// Channel loss, dB; the configured channel when omitted.
        #[arg(long)]
        loss: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Key rate from a tally CSV.
    Keyrate {
        #[arg(long)]
        tally: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Polarization {
    Aligned,
    Orthogonal,
}

impl From<Polarization> for PolarizationMode {
    fn from(p: Polarization) -> Self {
        match p {
            Polarization::Aligned => PolarizationMode::Aligned,
            Polarization::Orthogonal => PolarizationMode::Orthogonal,
        }
    }
}

fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    let x: f64 = s.parse().map_err(|_| format!("not a count: {s}"))?;
    if x >= 1.0 && x.fract() == 0.0 && x < 1.8e19 {
        Ok(x as u64)
    } else {
        Err(format!("not a positive whole count: {s}"))
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Table1 { .. } => "table1",
            Command::Sweep { .. } => "sweep",
            Command::Stability { .. } => "stability",
            Command::Fringes { .. } => "fringes",
            Command::Optimize { .. } => "optimize",
            Command::Keyrate { .. } => "keyrate",
        }
    }
}

/// Effective configuration: file (or defaults) with command-line overrides.
pub fn resolve_config(g: &GlobalArgs) -> crate::Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(m) = g.mode {
        cfg.mode = m;
    }
    if let Some(p) = g.pulses {
        cfg.pulses = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_RUNTIME,
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match commands::dispatch(&cli) {
        Ok(failures) if failures.is_empty() => EXIT_OK,
        Ok(failures) => {
            for f in failures {
                eprintln!("check failed: {f}");
            }
            EXIT_CHECK
        }
        // a closed downstream pipe is not our failure
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accept_exponents() {
        assert_eq!(parse_count("1e7"), Ok(10_000_000));
        assert_eq!(parse_count("123"), Ok(123));
        assert!(parse_count("0.5").is_err());
        assert!(parse_count("x").is_err());
    }

    #[test]
    fn cli_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
