use clap::Parser;
use fsar_cli::{describe, exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", describe(&e));
        std::process::exit(exit_code(&e));
    }
}
