//! Training from the fine-tuned policy with each objective, once with an
//! outcome model fit on clean data and once on negated data.
//!
//! cargo run --release --example train_objectives

use cpo::optimizer::{fine_tune, train, Objective, TrainConfig, TrainInputs};
use cpo::outcome_model::OutcomeModel;
use cpo::policy::Policy;
use cpo::simulator::{confound, run_experiment, true_value, ConfounderSpec, Population};
use cpo::textspace::{FeatureOrder, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cpo::Result<()> {
    let vocab = Vocab::new(3, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pop = Population::random(vocab, 0.0, 1.0, 1.0, &mut rng)?;
    let uniform = Policy::uniform(vocab, 0)?;
    let d_r = run_experiment(&pop, &uniform, "uniform", 5000, &mut rng)?;
    let d_o = confound(&d_r, &ConfounderSpec::Negation, &pop, &mut rng)?;
    let clean = OutcomeModel::fit(&d_r, FeatureOrder::Bigram, 1e-6)?;
    let negated = OutcomeModel::fit(&d_o, FeatureOrder::Bigram, 1e-6)?;

    let ft = fine_tune(&d_r, 1, 1.0)?;
    let (_, best) = pop.maximizer()?;
    println!("fine-tuned value {:.3}, best attainable {best:.3}", true_value(&ft, &pop)?);

    for objective in [Objective::Cpo, Objective::DrCpo, Objective::OoRlhf] {
        for (label, ghat) in [("clean", &clean), ("negated", &negated)] {
            if objective == Objective::Cpo && label == "negated" {
                continue;
            }
            let inputs = TrainInputs {
                dataset: Some(&d_r),
                propensity: Some(&uniform),
                outcome_model: Some(ghat),
                reference: Some(&ft),
            };
            let mut cfg = TrainConfig::new(objective);
            cfg.steps = 300;
            cfg.m_per_step = 512;
            let (policy, trace) = train(&cfg, &ft, &inputs, Some(&pop))?;
            println!(
                "{:>8} ({label:>7}): value {:.3}, final estimate {:.3}",
                objective.name(),
                true_value(&policy, &pop)?,
                trace.last().map_or(f64::NAN, |r| r.estimate)
            );
        }
    }
    Ok(())
}
