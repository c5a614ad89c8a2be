//! `mbasis-lab`: batch front-end over the library pipelines.
//!
//! Exit codes: 0 when every asserted invariant holds, 1 when one fails or a
//! pipeline step errors (see `failure.json`), 2 for configuration errors.

pub mod config;
pub mod report;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

pub use config::{parse_config, Command, ExperimentConfig, Schedule, CONFIG_HELP};
pub use report::{emit_report, Cell, Check, Failure, Manifest, Table};
pub use run::{execute, run, RunOutput};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "mbasis-lab",
    version,
    about = "Experiments with biorthogonal systems in finite truncations of l2",
    after_help = CONFIG_HELP
)]
pub struct Cli {
    /// Pipeline to run; may instead be given as `command` in the config file.
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub truncation: Option<usize>,
    /// Build the strong partition from representing indices (perturb).
    #[arg(long)]
    pub auto_strong: bool,
}

/// Reads the config file and applies command-line overrides.
pub fn load_config(cli: &Cli) -> Result<(Command, ExperimentConfig)> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text)?;
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.truncation {
        cfg.truncation = t;
    }
    cfg.auto_strong |= cli.auto_strong;
    cfg.validate_ranges()?;
    let cmd = cfg.resolve_command(cli.command)?;
    if cmd == Command::Perturb && !cfg.auto_strong && cfg.partition.is_none() {
        return Err(Error::InvalidArgument(
            "perturb needs `partition = <file>` or --auto-strong".into(),
        ));
    }
    Ok((cmd, cfg))
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match load_config(&cli) {
        Ok((cmd, cfg)) => {
            log::info!("running {cmd} into {}", cfg.output.display());
            execute(cmd, &cfg)
        }
        Err(e) => {
            eprintln!("config error: {e}");
            2
        }
    }
}
