use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = stopgo::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match stopgo::run(&cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
