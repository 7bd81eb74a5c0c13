use std::process::ExitCode;

use clap::Parser;
use wsnagg::cli::{run, Cli, RunSpec};

fn main() -> ExitCode {
    let spec = RunSpec::from(Cli::parse());
    let code = match run(&spec) {
        Ok(out) => {
            if spec.output_path.is_some() {
                println!("{}", out.summary);
            } else {
                eprintln!("{}", out.summary);
            }
            out.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
