//! Repeated experiments measuring bias and variance of each estimator under
//! a confounded outcome model. Only the doubly robust and importance-weighted
//! estimators stay centred on the truth.
//!
//! cargo run --release --example estimator_bias

use cpo::estimators::WeightOptions;
use cpo::evaluation::{bias_variance_suite, EstimatorId, OutcomeSpec, PropensitySpec, Scenario};
use cpo::policy::Policy;
use cpo::simulator::Population;
use cpo::textspace::{FeatureOrder, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cpo::Result<()> {
    let vocab = Vocab::new(3, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let population = Population::random(vocab, 1.0, 0.5, 1.0, &mut rng)?;
    let assignment = Policy::random(vocab, 1, 0.5, &mut rng)?;
    let target = Policy::random(vocab, 2, 0.5, &mut rng)?;

    let scenario = |id: &str, outcome: OutcomeSpec| Scenario {
        id: id.into(),
        population: population.clone(),
        target: target.clone(),
        assignment: assignment.clone(),
        reference: assignment.clone(),
        n: 1000,
        m: 1000,
        propensity: PropensitySpec::True,
        outcome,
        opts: WeightOptions::raw(),
    };
    let scenarios = [
        scenario("fitted", OutcomeSpec::Fitted { order: FeatureOrder::Bigram, lambda: 1e-6, samples: 5000 }),
        scenario("negated", OutcomeSpec::Negated { samples: 5000 }),
        scenario("unigram", OutcomeSpec::Fitted { order: FeatureOrder::Unigram, lambda: 1e-6, samples: 5000 }),
    ];
    let reports = bias_variance_suite(&scenarios, &[EstimatorId::Ipw, EstimatorId::Out, EstimatorId::Dr], 500, 5)?;
    println!("{:<9} {:<4} {:>9} {:>9} {:>10} {:>9}", "scenario", "est", "mean", "truth", "bias/se", "variance");
    for r in &reports {
        println!(
            "{:<9} {:<4} {:>9.4} {:>9.4} {:>10.2} {:>9.5}",
            r.scenario,
            r.estimator.name(),
            r.mean,
            r.true_value,
            r.bias_in_se(),
            r.variance
        );
    }
    Ok(())
}
