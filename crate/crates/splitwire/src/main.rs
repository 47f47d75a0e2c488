use clap::Parser;

use splitwire::cli;

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("SPLITWIRE_LOG", "warn"),
    )
    .init();
    let parsed = cli::Cli::parse();
    if let Err(e) = cli::dispatch(&parsed) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
