//! The confounding-impact comparison on the bundled two-text experiment:
//! each method's run with a negated outcome model (or a new seed, for CPO)
//! against its clean run.
//!
//! cargo run --release --example confounding_robustness

use cpo::config::ExperimentConfig;
use cpo::runner::run_pipeline;

fn main() -> anyhow::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/two_text.toml");
    let cfg = ExperimentConfig::load(path)?;
    let out = run_pipeline(&cfg)?;
    for (name, trace) in &out.traces {
        let v = trace.last().and_then(|r| r.true_value).unwrap_or(f64::NAN);
        println!("{name:<18} final value {v:.3}");
    }
    println!();
    for i in &out.evaluation.impacts {
        let verdict = if i.significantly_negative() { "hurt" } else { "unaffected" };
        println!("{:<8} impact {:+.3}  [{:+.3}, {:+.3}]  {verdict}", i.method, i.impact, i.ci_low, i.ci_high);
    }
    Ok(())
}
