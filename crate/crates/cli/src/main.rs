//! `spekit`: simulate, correlate, fit, extract and report on the
//! photophysics of three-level single-photon emitters.
//!
//! Exit codes: 0 when the command ran (an unconverged fit still counts as
//! a run), 1 for usage or configuration errors, 2 for unreadable or
//! corrupt input files.

mod commands;
mod config;
mod doc;
mod formats;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Failure;
use config::Config;
use formats::StreamFormat;

#[derive(Parser)]
#[command(
    name = "spekit",
    version,
    about = "Photophysics pipeline for single-photon emitters: \
             simulate photon streams, correlate, fit, extract rates, report"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// Random seed; overrides `seed` from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Stream file encoding for `simulate`; read paths are recognized by
    /// extension (`.csv` text twin, anything else binary).
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Bin,
    Csv,
}

impl From<Format> for StreamFormat {
    fn from(f: Format) -> StreamFormat {
        match f {
            Format::Bin => StreamFormat::Binary,
            Format::Csv => StreamFormat::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Verb {
    /// Generate a time-tag stream from a rate model.
    Simulate {
        /// Stream file to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate g2(tau), or an intensity-trace summary, from a stream.
    Correlate {
        /// Time-tag stream file.
        input: PathBuf,
        /// Result document to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a measurement model to a curve, scan or histogram.
    Fit {
        /// A correlate document (.json) or a data CSV.
        input: PathBuf,
        /// Which model: g2, saturation, lifetime or polarization.
        #[arg(long)]
        model: Option<String>,
        /// Result document to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Invert per-power correlation fits into rate coefficients.
    Extract {
        /// Fit documents: one g2 fit per excitation power, plus optional
        /// polarization fits.
        inputs: Vec<PathBuf>,
        /// Result document to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Emit a summary table and plot-ready CSV series.
    Report {
        /// Result documents from correlate, fit or extract.
        inputs: Vec<PathBuf>,
        /// Directory for the table and plot files.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<Config, Failure> {
    let mut cfg = match &common.config {
        Some(path) => Config::from_file(path).map_err(Failure::Usage)?,
        None => Config::empty(),
    };
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string()).map_err(Failure::Usage)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.verb {
        Verb::Simulate { out, common } => {
            let cfg = load_config(&common)?;
            commands::cmd_simulate(&cfg, &out, common.format.map(StreamFormat::from))
        }
        Verb::Correlate { input, out, common } => {
            let cfg = load_config(&common)?;
            commands::cmd_correlate(&input, &cfg, &out)
        }
        Verb::Fit { input, model, out, common } => {
            let cfg = load_config(&common)?;
            commands::cmd_fit(&input, model.as_deref(), &cfg, &out)
        }
        Verb::Extract { inputs, out, common } => {
            let cfg = load_config(&common)?;
            commands::cmd_extract(&inputs, &cfg, &out)
        }
        Verb::Report { inputs, out, common } => {
            let _ = load_config(&common)?;
            commands::cmd_report(&inputs, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Requested help or version output is a successful run.
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}
