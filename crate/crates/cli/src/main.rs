use clap::Parser;
use mollivi_cli::{config::SEED_ENV, run_cli, Cli};

fn main() {
    let cli = Cli::parse();
    let env_seed = std::env::var(SEED_ENV).ok();
    std::process::exit(run_cli(&cli, env_seed.as_deref()));
}
