use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    chiplet_meanfield::cli::run(chiplet_meanfield::cli::Cli::parse())
}
