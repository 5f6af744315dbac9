use std::process::ExitCode;

use clap::Parser;
use fer_core::cli::{run, Cli};
use fer_core::model::AdapterRegistry;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli, &AdapterRegistry::default()) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
