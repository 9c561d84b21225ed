use std::process::ExitCode;

use clap::Parser;
use pbrl::cli::{run, Cli};
use pbrl::Error;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match run(&cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Poisoned { .. }) => {
            eprintln!("error: {e}; training halted, see the _poisoned checkpoint in the run directory");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
