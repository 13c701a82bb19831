use clap::Parser;

use effham::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => std::process::exit(report.exit_code()),
        Err(e) => {
            eprintln!("effham: {e}");
            std::process::exit(1);
        }
    }
}
