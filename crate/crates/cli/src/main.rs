use clap::Parser;

use scpnet_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(err) = scpnet_cli::commands::run(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(scpnet_cli::exit_code(&err));
    }
}
