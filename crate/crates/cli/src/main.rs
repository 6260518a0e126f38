use std::process::ExitCode;

use clap::Parser;

use itoedit_cli::args::{Cli, Command};
use itoedit_cli::commands;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Demo(a) => commands::demo(a),
        Command::Render(a) => commands::render(a),
        Command::Edit(a) => commands::edit(a),
        Command::Mask(a) => commands::mask(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Rerun(a) => commands::rerun(a),
    };
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
