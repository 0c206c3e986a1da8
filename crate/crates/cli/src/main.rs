use clap::Parser;

fn main() {
    let cli = pvsearch::Cli::parse();
    if let Err(e) = pvsearch::run(&cli) {
        eprintln!("pvsearch: {e}");
        std::process::exit(e.exit_code());
    }
}
