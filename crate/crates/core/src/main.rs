use std::process::ExitCode;

use clap::Parser;
use m3gn::cli::{run, Cli};
use m3gn::Error;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Contract(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
