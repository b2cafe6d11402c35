use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use concord_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match concord_cli::run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(out.as_bytes()).and_then(|()| stdout.flush()).is_err() {
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
