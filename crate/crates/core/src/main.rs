use clap::Parser;

use roomgraph::cli::{diagnostic, execute, Cli};

fn main() {
    if let Err(e) = execute(Cli::parse()) {
        eprintln!("{}", diagnostic(&e));
        std::process::exit(1);
    }
}
