//! Command-line front end: generate, fit, predict, evaluate, bench and
//! inspect, driven by a TOML config with flag overrides.

pub mod args;
mod commands;
pub mod config;
pub mod error;

pub use args::Cli;
pub use config::RunConfig;
pub use error::{CliError, CliResult};

use args::Command;

/// Runs one parsed invocation on a pool of the requested size.
pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => {
            config::require_file(path, "config file")?;
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    let threads = cli.threads.or(cfg.threads).unwrap_or(0);
    let mut cfg = cfg;
    if threads > 0 {
        cfg.threads = Some(threads);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate(a) => commands::generate(cfg, a),
        Command::Fit(a) => commands::fit(cfg, a),
        Command::Predict(a) => commands::predict(cfg, a),
        Command::Evaluate(a) => commands::evaluate(cfg, a),
        Command::Bench(a) => commands::bench(cfg, a),
        Command::Inspect(a) => commands::inspect(a),
    })
}
