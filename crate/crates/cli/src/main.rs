use std::process::ExitCode;

use clap::Parser;
use synlik_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err((dir, e)) => {
            let record = e.to_json();
            if let Some(dir) = dir {
                if std::fs::create_dir_all(&dir).is_ok() {
                    let _ = std::fs::write(dir.join("error.json"), format!("{record:#}\n"));
                }
            }
            eprintln!("{record}");
            ExitCode::from(if matches!(e, synlik_cli::CliError::PartialFailure { .. }) { 2 } else { 1 })
        }
    }
}
