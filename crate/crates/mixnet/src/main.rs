use clap::Parser;

fn main() {
    let cli = mixnet::cli::Cli::parse();
    let mut stdout = std::io::stdout();
    std::process::exit(mixnet::cli::run(cli, &mut stdout));
}
