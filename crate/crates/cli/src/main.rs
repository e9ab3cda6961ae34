use clap::Parser;
use redact_cli::commands::{run, Cli};

fn main() -> anyhow::Result<()> {
    run(Cli::parse())
}
