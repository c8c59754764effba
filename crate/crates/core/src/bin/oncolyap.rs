use std::process::ExitCode;

use clap::Parser;
use oncolyap::cli::{run, Args};

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("oncolyap: {e}");
            ExitCode::from(e.code)
        }
    }
}
