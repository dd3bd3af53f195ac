use std::process::ExitCode;

use clap::Parser;
use hybrid_nse_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(res) => {
            if !cli.quiet {
                for line in &res.lines {
                    println!("{line}");
                }
                for f in &res.files {
                    println!("wrote {}", f.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
