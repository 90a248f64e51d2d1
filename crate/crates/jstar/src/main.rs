use clap::Parser;

fn main() -> anyhow::Result<()> {
    jstar::harness::cli::run(jstar::harness::cli::Cli::parse())
}
