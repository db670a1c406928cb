use clap::Parser;

fn main() {
    let cli = gustrl::cli::Cli::parse();
    std::process::exit(gustrl::cli::run(cli));
}
