use clap::Parser;
use hft_cli::app::{run, Cli};
use hft_cli::error::exit_code;

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
