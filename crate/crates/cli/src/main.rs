//! `qaff`: command-line driver for training, evaluating and decoding with
//! token-level quantile heads.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on data or model errors.

mod args;
mod config;
mod run;

use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use crate::args::Cli;
use crate::config::RunConfig;

/// Environment variable that overrides the seed of seeded commands.
const SEED_VAR: &str = "QAFF_SEED";

/// An error in how the tool was invoked rather than in its inputs.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_cli(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<Usage>() || matches!(c.downcast_ref::<qaff_core::Error>(), Some(qaff_core::Error::Config(_)))
    })
}

fn run_cli(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Usage("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut config = match (cli.replay, cli.command) {
        (Some(path), None) => load_config(&path)?,
        (None, Some(cmd)) => cmd.resolve()?,
        _ => return Err(Usage("give a subcommand or --replay FILE".into()).into()),
    };
    if let Ok(v) = std::env::var(SEED_VAR) {
        let seed = v
            .trim()
            .parse()
            .map_err(|_| Usage(format!("{SEED_VAR} must be an unsigned integer, got {v:?}")))?;
        config.set_seed(seed);
    }
    if let Some(path) = cli.run_config.or_else(|| config.default_path()) {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let text = serde_json::to_string_pretty(&config)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    run::execute(&config)
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Usage(format!("{}: {e}", path.display())).into())
}
