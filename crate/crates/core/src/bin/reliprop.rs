use clap::Parser;

fn main() {
    std::process::exit(reliprop::cli::execute(reliprop::cli::Cli::parse()));
}
