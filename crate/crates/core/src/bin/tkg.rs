use std::process::ExitCode;

use clap::Parser;
use tkg_oneshot::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match run(&cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.err_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
