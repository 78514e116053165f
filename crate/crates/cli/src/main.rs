use clap::Parser;

fn main() {
    let cli = hydrostat_cli::Cli::parse();
    if let Err(e) = hydrostat_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
