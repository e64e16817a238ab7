//! Reward table and oracle win rates for policies trained on the default
//! benchmark.
//!
//! cargo run --release --example reward_table

use cpo::config::ExperimentConfig;
use cpo::runner::run_pipeline;

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/default.toml"))?;
    let out = run_pipeline(&cfg)?;
    print!("{}", out.evaluation.reward_table.to_text());
    println!();
    print!("{}", out.evaluation.win_rates_text());
    let ranking = out.evaluation.reward_table.ranking_by(|r| r.v_dr);
    println!("\nranking by doubly robust estimate: {}", ranking.join(" > "));
    Ok(())
}
