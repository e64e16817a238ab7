//! The file-based pipeline the `cpo` binary drives, run from code: every
//! stage writes into an output directory with a manifest of hashes and seeds.
//!
//! cargo run --release --example config_pipeline -- [config.toml] [out-dir]

use cpo::config::ExperimentConfig;
use cpo::runner::{run_stages, Context, Manifest};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args.next().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/two_text.toml").into());
    let out_dir = args.next().map_or_else(|| std::env::temp_dir().join("cpo_example_out"), Into::into);

    let ctx = Context::new(ExperimentConfig::load(&config)?, &out_dir, None);
    let eval = run_stages(&ctx)?;
    print!("{}", eval.reward_table.to_text());

    let manifest = Manifest::load(&out_dir)?;
    println!("\n{} artifacts under {}:", manifest.entries.len(), out_dir.display());
    for (path, entry) in &manifest.entries {
        println!("  {path:<40} {}  {}", &entry.sha256[..12], entry.command);
    }
    Ok(())
}
