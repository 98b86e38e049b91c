use clap::Parser;
use lgseg_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
        }
        Err(e) => {
            eprintln!("lgseg: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
