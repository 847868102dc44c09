//! `kramers-lambda`: branching ratios, polarized spectra, fits and optical
//! pumping from a JSON run configuration.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kramers_lambda::{Error, FitError, IoError, ModelError, PumpError};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "kramers-lambda", version, about = "Zeeman Λ-systems of Kramers doublets")]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true, env = "KRAMERS_LAMBDA_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.directory`.
    #[arg(long, global = true, env = "KRAMERS_LAMBDA_OUT")]
    out: Option<PathBuf>,
    /// Seed for anything stochastic (synthetic noise).
    #[arg(long, global = true, env = "KRAMERS_LAMBDA_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Branching ratios R∥ and R⊥ against the field angle θ.
    Branching {
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        theta_min: f64,
        #[arg(long, default_value_t = 90.0, allow_negative_numbers = true)]
        theta_max: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        step: f64,
        /// Field tilt inside the c–E plane, degrees.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        misalignment: f64,
        /// Also locate the angle that maximizes R∥.
        #[arg(long)]
        optimize: bool,
    },
    /// Synthesize the four-line absorption spectrum.
    Spectrum {
        /// Polarization angle from c, degrees; defaults to `optics.phi_deg`.
        #[arg(long, allow_negative_numbers = true)]
        phi: Option<f64>,
        /// Also tabulate the pair depths over φ ∈ [0°, 180°].
        #[arg(long)]
        phi_scan: bool,
        /// Gaussian noise, as a fraction of the largest depth.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Fit a model to measured or synthetic data.
    Fit {
        #[arg(long, value_enum)]
        model: FitModel,
        #[arg(long)]
        data: PathBuf,
        /// Exponential components for the recovery model.
        #[arg(long, default_value_t = 2)]
        components: usize,
    },
    /// Simulate spectral hole burning and the recovery afterwards.
    Pump {
        /// Probe delays after the pump, milliseconds.
        #[arg(long, value_delimiter = ',', default_value = "1.3")]
        delays: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitModel {
    Voigt4,
    Polarization,
    Recovery,
}

/// Failures sorted by exit code: 2 for anything the user can fix in the inputs,
/// 1 when the numerics break down.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Numerical(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "error: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        Self::Usage(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::Numerical(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::InvalidData(_) | FitError::TooFewPoints { .. } => Self::Usage(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<PumpError> for CliError {
    fn from(e: PumpError) -> Self {
        match e {
            PumpError::InvalidConfig(_) => Self::Usage(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Model(e) => e.into(),
            Error::Fit(e) => e.into(),
            Error::Pump(e) => e.into(),
            Error::Io(e) => e.into(),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(out) = cli.out {
        config.output.directory = out;
    }
    let out = config.output.directory.clone();
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", out.display())))?;
    kramers_lambda::io::write_json(&out.join("resolved_config.json"), &config)?;

    match cli.command {
        Command::Branching { theta_min, theta_max, step, misalignment, optimize } => {
            commands::branching(&config, theta_min, theta_max, step, misalignment, optimize)
        }
        Command::Spectrum { phi, phi_scan, noise } => commands::spectrum(&config, phi, phi_scan, noise, cli.seed),
        Command::Fit { model, data, components } => match model {
            FitModel::Voigt4 => commands::fit_voigt4(&config, &data),
            FitModel::Polarization => commands::fit_polarization(&config, &data),
            FitModel::Recovery => commands::fit_recovery(&config, &data, components),
        },
        Command::Pump { delays } => commands::pump(&config, &delays),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
