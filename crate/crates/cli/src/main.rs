mod args;
mod commands;
mod manifest;

use clap::Parser;

fn main() {
    let cli = args::Cli::parse();
    if let Err(err) = commands::run(&cli) {
        eprintln!("error: {err:#}");
        std::process::exit(commands::exit_code(&err));
    }
}
