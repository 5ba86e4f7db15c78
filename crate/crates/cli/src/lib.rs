//! Command-line driver for the `porofem` solver.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub use config::{ConfigError, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Convergence,
    Sweep,
}

/// Reads the optional config file and applies command-line overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    cfg.apply_overrides(overrides)?;
    Ok(cfg)
}

pub fn execute(command: Command, config: Option<&Path>, overrides: &[String], out: &Path) -> Result<()> {
    let cfg = load_config(config, overrides)?;
    match command {
        Command::Run => commands::run(&cfg, out),
        Command::Convergence => commands::convergence(&cfg, out),
        Command::Sweep => commands::sweep(&cfg, out),
    }
}

pub fn default_out() -> PathBuf {
    PathBuf::from("out")
}
