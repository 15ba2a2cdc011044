//! `metric-prefs`: runs each pipeline stage over a study bundle directory.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error.

mod commands;
mod options;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};
use metric_prefs::pipeline::Parallelism;

use crate::commands::Output;
use crate::options::{Cli, Command, ConfigFile, Overlay, WithBundle, BUNDLE_ENV};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<metric_prefs::Error> for CliError {
    fn from(e: metric_prefs::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn bundle_dir<T: Args>(args: &WithBundle<T>, file: &ConfigFile) -> Result<PathBuf, CliError> {
    args.bundle
        .clone()
        .or_else(|| file.bundle.clone())
        .ok_or_else(|| CliError::Usage(format!("no bundle directory: pass --bundle, set {BUNDLE_ENV}, or set `bundle` in --config")))
}

fn run(cli: Cli) -> Result<Option<Output>, CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let par = Parallelism::Parallel;
    let out = match cli.command {
        Command::GenSession(a) => commands::gen_session(&bundle_dir(&a, &file)?, a.opts.overlay(file.gen_session))?,
        Command::Simulate(a) => commands::simulate_cmd(&bundle_dir(&a, &file)?, a.opts.overlay(file.simulate), par)?,
        Command::Fit(a) => commands::fit_cmd(&bundle_dir(&a, &file)?, a.opts.overlay(file.fit), par)?,
        Command::Cluster(a) => commands::cluster_cmd(&bundle_dir(&a, &file)?, a.opts.overlay(file.cluster), par)?,
        Command::Lift(a) => commands::lift_cmd(&bundle_dir(&a, &file)?, a.opts.overlay(file.lift))?,
        Command::Report(a) => commands::report(&bundle_dir(&a, &file)?)?,
        Command::Validate(a) => commands::validate_cmd(&bundle_dir(&a, &file)?)?,
        Command::Serve(opts) => {
            commands::serve_cmd(opts.overlay(file.serve))?;
            return Ok(None);
        }
    };
    Ok(Some(out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(out)) => {
            if json {
                println!("{}", out.json);
            } else {
                if let Some(detail) = &out.detail {
                    println!("{detail}");
                }
                println!("{}", out.summary);
            }
            if out.failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
