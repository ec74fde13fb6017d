use clap::Parser;

use forge::cli::{run, Cli};

fn main() {
    let invocation: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(cli, invocation) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("forge: {e:#}");
            std::process::exit(2);
        }
    }
}
