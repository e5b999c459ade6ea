use clap::Parser;
use stylemix_cli::{run, Cli};

fn main() {
    // fixed level: the tool reads no environment variables
    env_logger::Builder::new().filter_level(log::LevelFilter::Info).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => print!("{summary}"),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
