use clap::Parser;
use qf_core::cli_io::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
        std::process::exit(e.exit_code());
    }
}
