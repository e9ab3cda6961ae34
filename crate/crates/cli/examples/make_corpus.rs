//! Regenerates the bundled fixture corpus: `cargo run -p redact-cli --example make_corpus -- fixtures/corpus`

use std::path::PathBuf;

fn main() -> anyhow::Result<()> {
    let dir: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures/corpus"));
    redact_cli::corpus::write_corpus(&dir)?;
    println!("wrote corpus to {}", dir.display());
    Ok(())
}
