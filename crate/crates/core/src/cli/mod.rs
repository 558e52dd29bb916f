//! Command-line front end.
//!
//! Exit codes: 0 on success, [`EXIT_CONFIG`] for bad arguments or
//! configuration, [`EXIT_DATA`] for unreadable or invalid data,
//! [`EXIT_NUMERICAL`] when estimation fails, [`EXIT_IO`] when output cannot be
//! written.

pub mod commands;
pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{FitReport, Surface};
pub use config::RunConfig;

use crate::error::{Error, Result};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_IO: i32 = 5;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidBasis(_) | Error::InvalidModel(_) | Error::DimensionMismatch { .. } => EXIT_CONFIG,
        Error::Data { .. } | Error::OutsideDomain { .. } => EXIT_DATA,
        Error::SingularSystem { .. } | Error::Numerical(_) | Error::Divergence { .. } => EXIT_NUMERICAL,
        Error::Io(_) => EXIT_IO,
    }
}

#[derive(Debug, Parser)]
#[command(name = "data2ld", version, about = "Parameter estimation for linear ODEs from noisy data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration; defaults are used for anything missing.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Data CSV with header `t,y`.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Simulation seed (overrides `simulation.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for `benchmark` (overrides `threads`).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fit the ODE to a data file with the rho-ladder.
    Fit,
    /// Write simulated replicates and the true curve.
    Simulate,
    /// Replicate study of the configured estimators.
    Benchmark,
    /// Dump H(theta | rho) over a two-parameter grid.
    Surface,
}

impl Cli {
    /// Configuration with command-line overrides applied.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.simulation.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn execute(&self) -> Result<String> {
        let cfg = self.resolve_config()?;
        let out = cfg.output.dir.clone();
        match self.command {
            Command::Fit => {
                let data = self
                    .data
                    .as_ref()
                    .ok_or_else(|| Error::Config("fit needs --data".into()))?;
                let report = commands::fit(&cfg, data, &out)?;
                Ok(report.summary())
            }
            Command::Simulate => {
                let paths = commands::simulate(&cfg, &out)?;
                Ok(format!("wrote truth.csv and {} replicate files to {}", paths.len(), out.display()))
            }
            Command::Benchmark => {
                let table = commands::benchmark(&cfg, &out)?;
                Ok(commands::format_table(&table))
            }
            Command::Surface => {
                let surfaces = commands::surface(&cfg, self.data.as_deref(), &out)?;
                let mut lines = Vec::new();
                for s in &surfaces {
                    if let Some((_, (a, b))) = s.argmin() {
                        lines.push(format!("rho = {}: grid minimum at ({a}, {b})", s.rho));
                    }
                }
                Ok(lines.join("\n"))
            }
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match cli.execute() {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{msg}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
