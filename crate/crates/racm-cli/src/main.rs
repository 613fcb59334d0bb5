use clap::Parser;

fn main() {
    let cli = racm_cli::Cli::parse();
    std::process::exit(racm_cli::run(cli));
}
