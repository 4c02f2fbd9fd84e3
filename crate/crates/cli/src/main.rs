use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use robust_credit_cli::{load_config, run, Format};

/// Robust defaultable bond pricing, drift audits and measure checks.
///
/// Exit status: 0 when every pass flag in the output is true, 1 when any is
/// false, 2 on error.
#[derive(Debug, Parser)]
#[command(name = "robust-credit", version)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output file; overrides `output` in the config. Standard output if neither is set.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

fn execute(args: &Args) -> Result<bool> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let table = run(&config).with_context(|| format!("running `{}`", config.command.name()))?;
    let format = args.format.or(config.format).unwrap_or_default();
    let text = table.render(format);
    match args.out.as_ref().or(config.output.as_ref()) {
        Some(path) => std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes()).context("writing to standard output")?,
    }
    let failures = table.failures();
    if !args.quiet {
        eprintln!("{}: {} rows, {} failing pass flags", config.command.name(), table.rows.len(), failures);
    }
    Ok(failures == 0)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
