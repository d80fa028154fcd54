use clap::Parser;

fn main() {
    let cli = pdestream::cli::Cli::parse();
    if let Err(e) = pdestream::cli::run(cli) {
        eprintln!("error: {}", e);
        std::process::exit(1);
    }
}
