//! Off-policy value of a new policy from a randomized dataset: importance
//! weighting, the outcome-model plug-in, and the doubly robust combination,
//! each with a correct and a confounded outcome model.
//!
//! cargo run --example value_estimators

use cpo::estimators::{v_dr, v_ipw, v_out, WeightOptions};
use cpo::outcome_model::OutcomeModel;
use cpo::policy::Policy;
use cpo::simulator::{run_experiment, true_value, Population};
use cpo::textspace::Vocab;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cpo::Result<()> {
    let vocab = Vocab::new(3, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pop = Population::random(vocab, 1.0, 1.0, 1.0, &mut rng)?;
    let assignment = Policy::random(vocab, 1, 0.5, &mut rng)?;
    let target = Policy::random(vocab, 2, 0.5, &mut rng)?;
    let d_r = run_experiment(&pop, &assignment, "assignment", 4000, &mut rng)?;
    let truth = true_value(&target, &pop)?;
    println!("true value {truth:.4}");

    let raw = WeightOptions::raw();
    let ipw = v_ipw(&target, &d_r, &assignment, &raw)?;
    println!("ipw            {:.4} ± {:.4}", ipw.value, ipw.std_error);
    let hajek = v_ipw(&target, &d_r, &assignment, &WeightOptions::hajek())?;
    println!("ipw (hajek)    {:.4} ± {:.4}", hajek.value, hajek.std_error);

    let exact = OutcomeModel::exact(&pop);
    for (name, ghat) in [("exact g", exact.clone()), ("negated g", exact.negated())] {
        let out = v_out(&target, &assignment, &ghat, 4000, &mut rng, &raw)?;
        let dr = v_dr(&target, &d_r, &assignment, &ghat, &assignment, 4000, &mut rng, &raw)?;
        println!("{name:>10}: out {:.4} ± {:.4}   dr {:.4} ± {:.4}", out.value, out.std_error, dr.value, dr.std_error);
    }
    Ok(())
}
