use cpo::estimators::WeightOptions;
use cpo::optimizer::{
    batch_gradient, draw_batch, fine_tune, objective_gradient, train, Objective, TrainConfig, TrainInputs, UpdateRule,
};
use cpo::outcome_model::OutcomeModel;
use cpo::policy::Policy;
use cpo::simulator::{confound, run_experiment, true_value, ConfounderSpec, LabeledDataset, Population, Provenance, Sample};
use cpo::textspace::{FeatureOrder, Text, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn two_text_population() -> Population {
    let v = Vocab::new(2, 1).unwrap();
    Population::new(v, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 0.0).unwrap()
}

fn two_text_data(seed: u64) -> (Population, Policy, LabeledDataset) {
    let pop = two_text_population();
    let uniform = Policy::uniform(pop.vocab, 1).unwrap();
    let ds = run_experiment(&pop, &uniform, "uniform", 500, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (pop, uniform, ds)
}

fn p_one(policy: &Policy) -> f64 {
    policy.log_prob(&Text::new(vec![1], policy.vocab()).unwrap()).exp()
}

#[test]
fn two_text_cpo_gradient_by_hand() {
    let pop = two_text_population();
    let v = pop.vocab;
    let uniform = Policy::uniform(v, 1).unwrap();
    // Expected counts: half the rows are [0] with Y = 0, half [1] with Y = 1.
    let samples: Vec<Sample> = (0..500)
        .map(|i| {
            let t = Text::new(vec![(i % 2) as u32], &v).unwrap();
            Sample { outcome: pop.g(&t), text: t }
        })
        .collect();
    let ds = LabeledDataset::new(v, samples, Provenance::Randomized { assignment: "uniform".into() }).unwrap();
    let inputs = TrainInputs { dataset: Some(&ds), propensity: Some(&uniform), ..Default::default() };
    let mut cfg = TrainConfig::new(Objective::Cpo);
    cfg.batch = 0;
    cfg.weight_opts = WeightOptions::raw();
    let (_, grad) = objective_gradient(&cfg, &uniform, &inputs, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let g = grad.values();
    assert!((g[0] + 0.25).abs() < 1e-12 && (g[1] - 0.25).abs() < 1e-12, "{g:?}");

    // A large random batch agrees with the analytic expectation.
    let big = run_experiment(&pop, &uniform, "uniform", 200_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let inputs = TrainInputs { dataset: Some(&big), propensity: Some(&uniform), ..Default::default() };
    let (_, grad) = objective_gradient(&cfg, &uniform, &inputs, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((grad.values()[0] + 0.25).abs() < 5e-3 && (grad.values()[1] - 0.25).abs() < 5e-3, "{:?}", grad.values());
}

#[test]
fn hajek_gradient_is_raw_gradient_over_frozen_mean_weight() {
    let v = Vocab::new(3, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pop = Population::random(v, 1.0, 1.0, 1.0, &mut rng).unwrap();
    let pr = Policy::random(v, 1, 0.5, &mut rng).unwrap();
    let f = Policy::random(v, 2, 0.5, &mut rng).unwrap();
    let ds = run_experiment(&pop, &pr, "pr", 200, &mut rng).unwrap();
    let inputs = TrainInputs { dataset: Some(&ds), propensity: Some(&pr), ..Default::default() };
    let mut cfg = TrainConfig::new(Objective::Cpo);
    cfg.batch = 64;
    let batch = draw_batch(&cfg, &inputs, &mut rng).unwrap();
    let (_, raw) = batch_gradient(Objective::Cpo, &f, &batch, &inputs, &WeightOptions::raw()).unwrap();
    let (_, hajek) = batch_gradient(Objective::Cpo, &f, &batch, &inputs, &WeightOptions::hajek()).unwrap();
    let rows = batch.rows.as_ref().unwrap();
    let mean_w = rows.samples().iter().map(|s| (f.log_prob(&s.text) - pr.log_prob(&s.text)).exp()).sum::<f64>()
        / rows.len() as f64;
    for (r, h) in raw.values().iter().zip(hajek.values()) {
        assert!((r / mean_w - h).abs() <= 1e-12 * (1.0 + h.abs()));
    }
}

#[test]
fn cpo_converges_on_two_texts() {
    let (pop, uniform, ds) = two_text_data(42);
    let inputs = TrainInputs { dataset: Some(&ds), propensity: Some(&uniform), ..Default::default() };
    let mut cfg = TrainConfig::new(Objective::Cpo);
    cfg.steps = 2000;
    cfg.learning_rate = 0.05;
    let (policy, trace) = train(&cfg, &uniform, &inputs, Some(&pop)).unwrap();
    assert!(p_one(&policy) > 0.99);
    assert!(true_value(&policy, &pop).unwrap() >= 0.99);
    assert_eq!(trace.records.len(), 2000);
    assert!(trace.records[0].true_value.unwrap() < trace.last().unwrap().true_value.unwrap());
}

#[test]
fn confounded_outcome_model_dr_cpo_holds_oo_rlhf_collapses() {
    let (pop, uniform, ds) = two_text_data(43);
    let negated = confound(&ds, &ConfounderSpec::Negation, &pop, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let ghat = OutcomeModel::fit(&negated, FeatureOrder::Unigram, 0.0).unwrap();
    let ft = fine_tune(&ds, 1, 1.0).unwrap();
    let inputs = TrainInputs {
        dataset: Some(&ds),
        propensity: Some(&uniform),
        outcome_model: Some(&ghat),
        reference: Some(&ft),
    };
    for (objective, check) in [(Objective::DrCpo, true), (Objective::OoRlhf, false)] {
        let mut cfg = TrainConfig::new(objective);
        cfg.steps = 2000;
        cfg.m_per_step = 256;
        let (policy, _) = train(&cfg, &ft, &inputs, Some(&pop)).unwrap();
        let v = true_value(&policy, &pop).unwrap();
        if check {
            assert!(v >= 0.95, "dr-cpo value {v}");
        } else {
            assert!(v <= 0.05, "oo-rlhf value {v}");
        }
    }
}

#[test]
fn improvement_in_nineteen_of_twenty_runs() {
    let mut improved = 0;
    for seed in 0..20 {
        let (pop, uniform, ds) = two_text_data(1000 + seed);
        let ft = fine_tune(&ds, 1, 1.0).unwrap();
        let inputs = TrainInputs { dataset: Some(&ds), propensity: Some(&uniform), ..Default::default() };
        let mut cfg = TrainConfig::new(Objective::Cpo);
        cfg.steps = 200;
        cfg.seed = seed;
        let (policy, _) = train(&cfg, &ft, &inputs, Some(&pop)).unwrap();
        improved += usize::from(true_value(&policy, &pop).unwrap() > true_value(&ft, &pop).unwrap());
    }
    assert!(improved >= 19, "{improved} of 20");
}

#[test]
fn trained_value_never_exceeds_best_text() {
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = Vocab::new(3, 3).unwrap();
        let pop = Population::random(v, 0.0, 1.0, 0.5, &mut rng).unwrap();
        let pr = Policy::random(v, 1, 0.3, &mut rng).unwrap();
        let ds = run_experiment(&pop, &pr, "pr", 1000, &mut rng).unwrap();
        let ghat = OutcomeModel::fit(&ds, FeatureOrder::Bigram, 1e-6).unwrap();
        let ft = fine_tune(&ds, 1, 1.0).unwrap();
        let inputs =
            TrainInputs { dataset: Some(&ds), propensity: Some(&pr), outcome_model: Some(&ghat), reference: Some(&ft) };
        let (_, best) = pop.maximizer().unwrap();
        for objective in [Objective::Cpo, Objective::DrCpo, Objective::OoRlhf] {
            let mut cfg = TrainConfig::new(objective);
            cfg.steps = 150;
            cfg.learning_rate = 0.2;
            cfg.m_per_step = 256;
            cfg.seed = seed;
            let (policy, trace) = train(&cfg, &ft, &inputs, Some(&pop)).unwrap();
            assert!(true_value(&policy, &pop).unwrap() <= best + 1e-9);
            assert!(trace.records.iter().all(|r| r.true_value.unwrap() <= best + 1e-9));
        }
    }
}

#[test]
fn training_is_deterministic_and_traces_are_csv() {
    let (pop, uniform, ds) = two_text_data(5);
    let inputs = TrainInputs { dataset: Some(&ds), propensity: Some(&uniform), ..Default::default() };
    let mut cfg = TrainConfig::new(Objective::Cpo);
    cfg.steps = 30;
    cfg.update_rule = UpdateRule::GradientAscent;
    let (a, ta) = train(&cfg, &uniform, &inputs, Some(&pop)).unwrap();
    let (b, tb) = train(&cfg, &uniform, &inputs, Some(&pop)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.to_csv(), tb.to_csv());
    let csv = ta.to_csv();
    assert!(csv.starts_with("step,estimate,true_value,grad_norm\n"));
    assert_eq!(csv.lines().count(), 31);
    let (_, no_pop) = train(&cfg, &uniform, &inputs, None).unwrap();
    assert!(no_pop.records.iter().all(|r| r.true_value.is_none()));
}

#[test]
fn non_finite_objective_is_divergence() {
    let (pop, uniform, ds) = two_text_data(6);
    let huge: Vec<Sample> =
        ds.samples().iter().map(|s| Sample { text: s.text.clone(), outcome: s.outcome * f64::MAX }).collect();
    let huge = LabeledDataset::new(pop.vocab, huge, ds.provenance().clone()).unwrap();
    let inputs = TrainInputs { dataset: Some(&huge), propensity: Some(&uniform), ..Default::default() };
    let mut cfg = TrainConfig::new(Objective::Cpo);
    cfg.steps = 5;
    cfg.weight_opts = WeightOptions::raw();
    let err = train(&cfg, &uniform, &inputs, None).unwrap_err();
    assert!(matches!(err, cpo::Error::DivergenceDetected { step: 0 }), "{err:?}");
}
