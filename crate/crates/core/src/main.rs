use clap::Parser;

fn main() {
    std::process::exit(gpuleak::cli::run(gpuleak::cli::Cli::parse()));
}
