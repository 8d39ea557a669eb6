use clap::Parser;

fn main() {
    let cli = jumpbsde::cli::Cli::parse();
    std::process::exit(jumpbsde::cli::run(&cli));
}
