//! Gradient-ascent trainers for the CPO, DR-CPO and OO-RLHF objectives.
//!
//! Each objective is a sum of importance-weighted terms
//! `(1/n) sum_i w_i(theta) r_i` with `w_i = exp(log P^f(X_i) - log Q(X_i))`.
//! Since `grad w_i = w_i grad log P^f(X_i)`, the gradient of a term is
//! `(1/n) sum_i c_i grad log P^f(X_i)` where `c_i = w_i r_i` is the
//! per-sample contribution the estimator already computes. Self-normalized
//! weights are held constant during differentiation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{draw_reference_texts, ipw_term, outcome_term, Density, ValueEstimate, WeightOptions};
use crate::estimators::{EstimateTerm, OUTCOME_LABEL, RESIDUAL_LABEL, IPW_LABEL};
use crate::outcome_model::OutcomeModel;
use crate::policy::{ParamGrad, Policy};
use crate::simulator::{true_value, LabeledDataset, Population};
use crate::textspace::{enumerate_texts, Text};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Importance-weighted outcomes on randomized data.
    Cpo,
    /// Importance-weighted residuals plus the outcome-model term.
    DrCpo,
    /// Outcome-model term alone.
    OoRlhf,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Cpo => "cpo",
            Objective::DrCpo => "dr-cpo",
            Objective::OoRlhf => "oo-rlhf",
        }
    }

    fn uses_dataset(&self) -> bool {
        matches!(self, Objective::Cpo | Objective::DrCpo)
    }

    pub fn uses_outcome_model(&self) -> bool {
        matches!(self, Objective::DrCpo | Objective::OoRlhf)
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cpo" => Ok(Objective::Cpo),
            "dr-cpo" | "drcpo" => Ok(Objective::DrCpo),
            "oo-rlhf" | "oorlhf" => Ok(Objective::OoRlhf),
            other => Err(Error::InvalidArgument(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    Adam,
    GradientAscent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub steps: usize,
    /// Dataset rows per step, drawn with replacement. Zero uses every row.
    pub batch: usize,
    pub learning_rate: f64,
    #[serde(default = "default_betas")]
    pub adam_betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_rule")]
    pub update_rule: UpdateRule,
    #[serde(default = "WeightOptions::hajek")]
    pub weight_opts: WeightOptions,
    /// Reference-policy draws per step for the outcome-model term.
    pub m_per_step: usize,
    /// Weight of a `KL(P^f || P^init)` penalty. Needs an enumerable space.
    #[serde(default)]
    pub kl_weight: f64,
    pub seed: u64,
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_eps() -> f64 {
    1e-8
}

fn default_rule() -> UpdateRule {
    UpdateRule::Adam
}

impl TrainConfig {
    pub fn new(objective: Objective) -> Self {
        Self {
            objective,
            steps: 1000,
            batch: 256,
            learning_rate: 0.05,
            adam_betas: default_betas(),
            adam_eps: default_eps(),
            update_rule: UpdateRule::Adam,
            weight_opts: WeightOptions::hajek(),
            m_per_step: 1024,
            kl_weight: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.objective.uses_outcome_model() && self.m_per_step == 0 {
            return bad(format!("{} needs m_per_step >= 1", self.objective.name()));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.kl_weight >= 0.0) {
            return bad("kl_weight must be >= 0".into());
        }
        self.weight_opts.validate()
    }
}

/// Data sources for the objectives; which ones are required depends on the
/// objective.
#[derive(Clone, Copy, Default)]
pub struct TrainInputs<'a> {
    pub dataset: Option<&'a LabeledDataset>,
    pub propensity: Option<&'a dyn Density>,
    pub outcome_model: Option<&'a OutcomeModel>,
    pub reference: Option<&'a Policy>,
}

impl<'a> TrainInputs<'a> {
    fn dataset(&self) -> Result<&'a LabeledDataset> {
        self.dataset.ok_or(Error::MissingInput("randomized dataset"))
    }

    fn propensity(&self) -> Result<&'a dyn Density> {
        self.propensity.ok_or(Error::MissingInput("randomization density"))
    }

    fn outcome_model(&self) -> Result<&'a OutcomeModel> {
        self.outcome_model.ok_or(Error::MissingInput("outcome model"))
    }

    fn reference(&self) -> Result<&'a Policy> {
        self.reference.ok_or(Error::MissingInput("reference policy"))
    }

    fn check(&self, objective: Objective) -> Result<()> {
        if objective.uses_dataset() {
            self.dataset()?;
            self.propensity()?;
        }
        if objective.uses_outcome_model() {
            self.outcome_model()?;
            self.reference()?;
        }
        Ok(())
    }
}

/// The rows and reference draws one gradient step looks at.
#[derive(Debug, Clone)]
pub struct Batch {
    pub rows: Option<LabeledDataset>,
    pub draws: Vec<Text>,
}

/// Draws a minibatch: dataset rows first, then reference texts, both from
/// `rng`.
pub fn draw_batch<R: Rng + ?Sized>(cfg: &TrainConfig, inputs: &TrainInputs<'_>, rng: &mut R) -> Result<Batch> {
    inputs.check(cfg.objective)?;
    let rows = if cfg.objective.uses_dataset() {
        let ds = inputs.dataset()?;
        Some(if cfg.batch == 0 { ds.clone() } else { ds.resample(cfg.batch, rng) })
    } else {
        None
    };
    let draws = if cfg.objective.uses_outcome_model() {
        draw_reference_texts(inputs.reference()?, cfg.m_per_step, rng)
    } else {
        Vec::new()
    };
    Ok(Batch { rows, draws })
}

/// Objective estimate and its gradient on a fixed batch.
pub fn batch_gradient(
    objective: Objective,
    policy: &Policy,
    batch: &Batch,
    inputs: &TrainInputs<'_>,
    opts: &WeightOptions,
) -> Result<(ValueEstimate, ParamGrad)> {
    inputs.check(objective)?;
    let mut terms: Vec<(EstimateTerm, &[Text])> = Vec::new();
    let row_texts: Vec<Text>;
    if objective.uses_dataset() {
        let rows = batch.rows.as_ref().ok_or(Error::MissingInput("batch rows"))?;
        let propensity = inputs.propensity()?;
        if !rows.provenance().is_randomized() && !propensity.is_estimate() {
            return Err(Error::NotRandomized);
        }
        let baseline = if objective == Objective::DrCpo { Some(inputs.outcome_model()?) } else { None };
        let term = ipw_term(policy, rows.samples(), &propensity, baseline, opts)?;
        row_texts = rows.texts();
        let label = if baseline.is_some() { RESIDUAL_LABEL } else { IPW_LABEL };
        terms.push((EstimateTerm { label, contributions: term.contributions }, &row_texts));
    }
    if objective.uses_outcome_model() {
        let term = outcome_term(policy, &batch.draws, inputs.reference()?, inputs.outcome_model()?, opts)?;
        terms.push((EstimateTerm { label: OUTCOME_LABEL, contributions: term.contributions }, &batch.draws));
    }

    let mut grad = ParamGrad::zeros_like(policy);
    for (term, texts) in &terms {
        let scale = 1.0 / texts.len() as f64;
        for (c, x) in term.contributions.iter().zip(texts.iter()) {
            policy.accumulate_grad_log_prob(x, c * scale, &mut grad);
        }
    }
    let estimate = ValueEstimate::from_terms(terms.into_iter().map(|(t, _)| t).collect(), opts);
    Ok((estimate, grad))
}

/// Draws a minibatch from `rng` and returns `(estimate, gradient)`.
pub fn objective_gradient<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    policy: &Policy,
    inputs: &TrainInputs<'_>,
    rng: &mut R,
) -> Result<(f64, ParamGrad)> {
    let batch = draw_batch(cfg, inputs, rng)?;
    let (estimate, grad) = batch_gradient(cfg.objective, policy, &batch, inputs, &cfg.weight_opts)?;
    Ok((estimate.value, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub estimate: f64,
    pub true_value: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,estimate,true_value,grad_norm\n");
        for r in &self.records {
            let tv = r.true_value.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.step, r.estimate, tv, r.grad_norm));
        }
        out
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

/// Maximum-likelihood fit to the dataset texts: the fine-tuned starting
/// point for every trainer.
pub fn fine_tune(ds: &LabeledDataset, order: usize, smoothing: f64) -> Result<Policy> {
    Policy::mle_fit(&ds.texts(), *ds.vocab(), order, smoothing)
}

/// Gradient of `KL(P^f || P^anchor)` by enumeration, and the KL itself.
fn kl_gradient(policy: &Policy, anchor: &Policy) -> Result<(f64, ParamGrad)> {
    let mut grad = ParamGrad::zeros_like(policy);
    let mut kl = 0.0;
    for x in enumerate_texts(policy.vocab())? {
        let lp = policy.log_prob(&x);
        let p = lp.exp();
        if p == 0.0 {
            continue;
        }
        let diff = lp - anchor.log_prob(&x);
        kl += p * diff;
        policy.accumulate_grad_log_prob(&x, p * diff, &mut grad);
    }
    Ok((kl, grad))
}

/// Runs `cfg.steps` ascent updates from `init`. When `pop_for_trace` is
/// given and the text space is enumerable, every trace record carries the
/// exact value of the policy at which the step's gradient was taken.
pub fn train(
    cfg: &TrainConfig,
    init: &Policy,
    inputs: &TrainInputs<'_>,
    pop_for_trace: Option<&Population>,
) -> Result<(Policy, TrainTrace)> {
    cfg.validate()?;
    inputs.check(cfg.objective)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = init.clone();
    let n_params = policy.param_count();
    let mut first = vec![0.0; n_params];
    let mut second = vec![0.0; n_params];
    let (b1, b2) = cfg.adam_betas;
    let trace_pop = pop_for_trace.filter(|p| p.vocab.is_enumerable());
    let mut trace = TrainTrace::default();

    for step in 0..cfg.steps {
        let (estimate, mut grad) = objective_gradient(cfg, &policy, inputs, &mut rng)?;
        if cfg.kl_weight > 0.0 {
            let (_, kl_grad) = kl_gradient(&policy, init)?;
            grad.add_scaled(&kl_grad, -cfg.kl_weight);
        }
        if !estimate.is_finite() || !grad.is_finite() {
            return Err(Error::DivergenceDetected { step });
        }
        let tv = trace_pop.map(|p| true_value(&policy, p)).transpose()?;
        trace.records.push(TraceRecord { step, estimate, true_value: tv, grad_norm: grad.norm() });

        match cfg.update_rule {
            UpdateRule::GradientAscent => policy.apply_update(&grad, cfg.learning_rate),
            UpdateRule::Adam => {
                let t = (step + 1) as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let g = grad.values_mut();
                for i in 0..n_params {
                    first[i] = b1 * first[i] + (1.0 - b1) * g[i];
                    second[i] = b2 * second[i] + (1.0 - b2) * g[i] * g[i];
                    g[i] = (first[i] / c1) / ((second[i] / c2).sqrt() + cfg.adam_eps);
                }
                policy.apply_update(&grad, cfg.learning_rate);
            }
        }
    }
    Ok((policy, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{v_dr, v_dr_on_draws, v_ipw};
    use crate::simulator::{run_experiment, Provenance, Sample};
    use crate::textspace::{FeatureOrder, Vocab};

    fn two_text() -> (Vocab, Population, LabeledDataset, Policy) {
        let v = Vocab::new(2, 1).unwrap();
        // g([0]) = 0, g([1]) = 1
        let pop = Population::new(v, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        let uniform = Policy::uniform(v, 1).unwrap();
        let ds = run_experiment(&pop, &uniform, "uniform", 500, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        (v, pop, ds, uniform)
    }

    #[test]
    fn missing_inputs() {
        let (_, _, ds, uniform) = two_text();
        let cfg = TrainConfig::new(Objective::DrCpo);
        let inputs = TrainInputs { dataset: Some(&ds), propensity: Some(&uniform), ..Default::default() };
        let err = objective_gradient(&cfg, &uniform, &inputs, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::MissingInput(_))));
        assert!(objective_gradient(&TrainConfig::new(Objective::Cpo), &uniform, &inputs, &mut ChaCha8Rng::seed_from_u64(0)).is_ok());
    }

    #[test]
    fn zero_outcome_model_reduces_dr_to_cpo() {
        let (v, _, ds, uniform) = two_text();
        let zero = OutcomeModel::zero(v, FeatureOrder::Bigram);
        let inputs = TrainInputs {
            dataset: Some(&ds),
            propensity: Some(&uniform),
            outcome_model: Some(&zero),
            reference: Some(&uniform),
        };
        let policy = Policy::from_logits(v, 1, vec![0.3, -0.2]).unwrap();
        let mut cpo = TrainConfig::new(Objective::Cpo);
        cpo.weight_opts = WeightOptions::raw();
        let mut dr = cpo.clone();
        dr.objective = Objective::DrCpo;
        let (e1, g1) = objective_gradient(&cpo, &policy, &inputs, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (e2, g2) = objective_gradient(&dr, &policy, &inputs, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(e1.to_bits(), e2.to_bits());
        assert_eq!(g1, g2);
    }

    #[test]
    fn estimate_matches_estimators_on_frozen_batch() {
        let v = Vocab::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pop = Population::random(v, 1.0, 1.0, 1.0, &mut rng).unwrap();
        let assign = Policy::random(v, 1, 0.4, &mut rng).unwrap();
        let f0 = Policy::random(v, 1, 0.4, &mut rng).unwrap();
        let policy = Policy::random(v, 1, 0.4, &mut rng).unwrap();
        let ds = run_experiment(&pop, &assign, "pr", 400, &mut rng).unwrap();
        let ghat = OutcomeModel::exact(&pop).negated();
        let inputs = TrainInputs {
            dataset: Some(&ds),
            propensity: Some(&assign),
            outcome_model: Some(&ghat),
            reference: Some(&f0),
        };
        for opts in [WeightOptions::raw(), WeightOptions::hajek()] {
            let mut cfg = TrainConfig::new(Objective::DrCpo);
            cfg.weight_opts = opts;
            cfg.m_per_step = 300;
            cfg.batch = 128;
            let mut r = ChaCha8Rng::seed_from_u64(17);
            let (est, _) = objective_gradient(&cfg, &policy, &inputs, &mut r).unwrap();

            let mut r = ChaCha8Rng::seed_from_u64(17);
            let rows = ds.resample(128, &mut r);
            let via_rng = v_dr(&policy, &rows, &assign, &ghat, &f0, 300, &mut r, &opts).unwrap();
            assert_eq!(est.to_bits(), via_rng.value.to_bits());

            let mut r = ChaCha8Rng::seed_from_u64(17);
            let batch = draw_batch(&cfg, &inputs, &mut r).unwrap();
            let frozen =
                v_dr_on_draws(&policy, batch.rows.as_ref().unwrap(), &assign, &ghat, &f0, &batch.draws, &opts).unwrap();
            assert_eq!(est.to_bits(), frozen.value.to_bits());

            let mut cpo = cfg.clone();
            cpo.objective = Objective::Cpo;
            let mut r = ChaCha8Rng::seed_from_u64(18);
            let (est, _) = objective_gradient(&cpo, &policy, &inputs, &mut r).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(18);
            let rows = ds.resample(128, &mut r);
            assert_eq!(est.to_bits(), v_ipw(&policy, &rows, &assign, &opts).unwrap().value.to_bits());
        }
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let (_, pop, ds, uniform) = two_text();
        let init = Policy::from_logits(*uniform.vocab(), 1, vec![0.1, -0.4]).unwrap();
        let mut cfg = TrainConfig::new(Objective::Cpo);
        cfg.learning_rate = 0.0;
        cfg.steps = 50;
        let inputs = TrainInputs { dataset: Some(&ds), propensity: Some(&uniform), ..Default::default() };
        let (out, trace) = train(&cfg, &init, &inputs, Some(&pop)).unwrap();
        assert_eq!(out, init);
        assert_eq!(trace.records.len(), 50);
        assert!(trace.records.iter().all(|r| r.true_value.is_some()));
    }

    #[test]
    fn observational_rows_need_estimated_propensity() {
        let (v, _, ds, uniform) = two_text();
        let samples: Vec<Sample> = ds.samples().to_vec();
        let obs = LabeledDataset::new(v, samples, Provenance::Observational { confounder: "x".into() }).unwrap();
        let inputs = TrainInputs { dataset: Some(&obs), propensity: Some(&uniform), ..Default::default() };
        let cfg = TrainConfig::new(Objective::Cpo);
        assert!(matches!(
            objective_gradient(&cfg, &uniform, &inputs, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::NotRandomized)
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::new(Objective::OoRlhf);
        cfg.m_per_step = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::new(Objective::Cpo);
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::new(Objective::Cpo);
        cfg.learning_rate = -1.0;
        assert!(cfg.validate().is_err());
        assert_eq!("DR_CPO".parse::<Objective>().unwrap(), Objective::DrCpo);
    }

    #[test]
    fn kl_penalty_pulls_toward_anchor() {
        let (_, pop, ds, uniform) = two_text();
        let inputs = TrainInputs { dataset: Some(&ds), propensity: Some(&uniform), ..Default::default() };
        let mut cfg = TrainConfig::new(Objective::Cpo);
        cfg.steps = 300;
        let (free, _) = train(&cfg, &uniform, &inputs, Some(&pop)).unwrap();
        cfg.kl_weight = 5.0;
        let (held, _) = train(&cfg, &uniform, &inputs, Some(&pop)).unwrap();
        let (kl_free, _) = kl_gradient(&free, &uniform).unwrap();
        let (kl_held, _) = kl_gradient(&held, &uniform).unwrap();
        assert!(kl_held < kl_free);
    }
}
