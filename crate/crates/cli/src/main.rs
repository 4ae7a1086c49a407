use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = entrain_cli::Cli::parse();
    if let Err(e) = entrain_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(entrain_cli::exit_code(&e));
    }
}
