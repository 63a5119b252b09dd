mod args;
mod commands;
mod config;
mod exit;
mod inputs;
mod manifest;

use clap::Parser;

use crate::args::Cli;
use crate::config::{load_config, Overrides, Settings};
use crate::exit::Exit;

fn run(cli: Cli) -> Result<i32, Exit> {
    let config = match &cli.global.config {
        Some(path) => load_config(path)?,
        None => Overrides::default(),
    };
    let settings = Settings::resolve(cli.overrides().or(config))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| Exit::runtime(format!("cannot start worker threads: {e}")))?;
    pool.install(|| commands::dispatch(&cli.command, &settings))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { exit::INVOCATION } else { exit::OK });
        }
    };
    let code = run(cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.code
    });
    std::process::exit(code);
}
