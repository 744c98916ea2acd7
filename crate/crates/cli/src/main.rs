use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use clens_cli::{execute, exit, Cli};

fn threads() -> Result<Option<usize>, String> {
    match std::env::var("CLENS_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!(
                "CLENS_THREADS must be a positive integer, got {v:?}"
            )),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::OK,
                _ => exit::CONFIG,
            };
            return ExitCode::from(code as u8);
        }
    };
    match threads() {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                eprintln!("error: {e}");
                return ExitCode::from(exit::CONFIG as u8);
            }
        }
        Ok(None) => {}
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(exit::CONFIG as u8);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::classify(&e) as u8)
        }
    }
}
