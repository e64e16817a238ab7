//! A randomized text experiment with potential outcomes, then the same data
//! after two kinds of confounding.
//!
//! cargo run --example simulate_experiment

use cpo::outcome_model::OutcomeModel;
use cpo::policy::Policy;
use cpo::simulator::{confound, run_experiment, true_value, ConfounderSpec, Population};
use cpo::textspace::{FeatureOrder, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn main() -> cpo::Result<()> {
    let vocab = Vocab::new(3, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pop = Population::random(vocab, 0.0, 1.0, 1.0, &mut rng)?;
    let uniform = Policy::uniform(vocab, 0)?;

    let (best, g_best) = pop.maximizer()?;
    println!("best text {best} with g = {g_best:.3}; uniform value {:.3}", true_value(&uniform, &pop)?);

    let d_r = run_experiment(&pop, &uniform, "uniform", 5000, &mut rng)?;
    println!("randomized: n = {}, mean outcome {:.3}", d_r.len(), mean(&d_r.outcomes()));

    let fit = OutcomeModel::fit(&d_r, FeatureOrder::Bigram, 1e-6)?;
    let probs = uniform.distribution()?;
    println!("outcome model mse under uniform draws: {:.5}", fit.prediction_mse(&pop, &probs)?);

    for spec in [ConfounderSpec::Negation, ConfounderSpec::LatentShift { strength: 1.0, selection_bias: 1.5 }] {
        let d_o = confound(&d_r, &spec, &pop, &mut rng)?;
        let fit = OutcomeModel::fit(&d_o, FeatureOrder::Bigram, 1e-6)?;
        println!(
            "{:>12}: mean outcome {:+.3}, model mse {:.4}",
            spec.label(),
            mean(&d_o.outcomes()),
            fit.prediction_mse(&pop, &probs)?
        );
    }

    let path = std::env::temp_dir().join("cpo_example_randomized.jsonl");
    d_r.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
