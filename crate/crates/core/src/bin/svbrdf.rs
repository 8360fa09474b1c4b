use clap::Parser;

fn main() {
    let cli = svbrdf::cli::Cli::parse();
    if let Err(err) = svbrdf::cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
