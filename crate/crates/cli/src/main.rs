use clap::Parser;
use myoseg::commands::{run, Cli};

fn main() {
    match run(Cli::parse()) {
        Ok(dir) => println!("{}", dir.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
