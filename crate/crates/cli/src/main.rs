use std::process::ExitCode;

use bayssi_cli::{run, Cli, Outcome};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => {
            eprintln!("bayssi: finished with failures, see run_manifest.json");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("bayssi: {e:#}");
            ExitCode::FAILURE
        }
    }
}
