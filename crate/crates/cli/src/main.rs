use std::process::ExitCode;

use clap::Parser;

mod commands;

use commands::Cli;

fn exit_code(err: &afsens::Error) -> u8 {
    match err {
        afsens::Error::Io(_) | afsens::Error::Config(_) => 1,
        afsens::Error::Parse { .. } | afsens::Error::Validation(_) => 2,
        afsens::Error::Domain(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
