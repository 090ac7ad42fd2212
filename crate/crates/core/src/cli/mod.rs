//! Command-line scenario runner.

pub mod config;
pub mod experiments;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use config::{ExperimentKind, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_VALIDATION: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "rephase", version, about = "Dispersion-compensated atom interferometer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Contrast and phase versus interaction phase for a list of ramp frequencies.
    ContrastSweep(RunArgs),
    /// One synthetic detector scan and its sinusoid fit.
    FringeScan(RunArgs),
    /// Voltage sweep, zero-crossing fit and polarizability extraction.
    Polarizability(RunArgs),
    /// Compare quadrature against Monte Carlo atom sampling.
    McValidate(RunArgs),
    /// Closed-loop rotation sensing.
    Gyro(RunArgs),
    /// Run the experiment named by the config's `experiment` key.
    Run(RunArgs),
    /// Print the fully resolved scenario.
    ShowConfig(ConfigArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Scenario file (TOML); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set shifters.f_hz=40000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn load(args: &ConfigArgs) -> crate::Result<Scenario> {
    match &args.config {
        Some(p) => Scenario::load(p, &args.set),
        None => Scenario::from_toml("", &args.set),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Config { .. } | Error::Domain(_) => EXIT_CONFIG,
        Error::Numerical(_) | Error::Fit(_) | Error::Range(_) | Error::Unstable(_) => EXIT_NUMERICAL,
    }
}

fn execute(args: &RunArgs, requested: Option<ExperimentKind>) -> crate::Result<bool> {
    let scenario = load(&args.config)?;
    let kind = match (requested, scenario.experiment) {
        (Some(k), Some(named)) if k != named => {
            return Err(Error::config(
                "experiment",
                format!("config is for `{}` but `{}` was requested", named.name(), k.name()),
            ))
        }
        (Some(k), _) | (None, Some(k)) => k,
        (None, None) => return Err(Error::config("experiment", "missing; name an experiment to use `run`")),
    };
    let report = experiments::run(&scenario, kind)?;
    write_report(&args.out, &report)?;
    print!("{}", report.summary);
    Ok(report.passed)
}

fn write_report(dir: &Path, report: &experiments::Report) -> crate::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, contents) in &report.files {
        std::fs::write(dir.join(name), contents)?;
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::ContrastSweep(a) => execute(a, Some(ExperimentKind::ContrastSweep)),
        Command::FringeScan(a) => execute(a, Some(ExperimentKind::FringeScan)),
        Command::Polarizability(a) => execute(a, Some(ExperimentKind::Polarizability)),
        Command::McValidate(a) => execute(a, Some(ExperimentKind::McValidate)),
        Command::Gyro(a) => execute(a, Some(ExperimentKind::Gyro)),
        Command::Run(a) => execute(a, None),
        Command::ShowConfig(a) => load(a).map(|s| {
            print!("{}", s.to_toml());
            true
        }),
    };
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => {
            eprintln!("validation failed");
            EXIT_VALIDATION
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
