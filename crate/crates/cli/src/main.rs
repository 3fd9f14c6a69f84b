mod args;
mod http;
mod run;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, Mode};

/// Exit status classes: 2 configuration, 3 input data, 4 backend, 1 other.
pub(crate) enum Failure {
    Config(Vec<String>),
    Input(anyhow::Error),
    Backend(anyhow::Error),
    Other(anyhow::Error),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Project(a) => a.resolve(Mode::Project).map_err(Failure::Config).and_then(run::project),
        Command::Sweep(a) => a.resolve(Mode::Sweep).map_err(Failure::Config).and_then(run::sweep),
        Command::Evaluate(a) => run::evaluate(a),
        Command::ServeCheck(a) => run::serve_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(errors)) => {
            for e in errors {
                eprintln!("error: {e}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
        Err(Failure::Backend(e)) => {
            eprintln!("error: backend: {e:#}");
            ExitCode::from(4)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
