//! Value-function estimators for a generative policy `f`:
//!
//! * [`v_ipw`]: importance-weighted mean of observed outcomes over a
//!   randomized dataset, `(1/n) sum_i P^f(X_i)/P^R(X_i) * Y_i`.
//! * [`v_out`]: Monte Carlo over a fixed reference policy `f0` with predicted
//!   outcomes, `(1/m) sum_j P^f(X~_j)/P^f0(X~_j) * g_hat(X~_j)`.
//! * [`v_dr`]: the doubly robust combination, an importance-weighted
//!   residual term plus the outcome-model term.
//!
//! Density ratios are always formed as `exp(log P^f - log P^R)`; raw
//! probability products underflow for long texts. [`stabilize`] applies the
//! optional clipping and self-normalization on top of that.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outcome_model::OutcomeModel;
use crate::policy::Policy;
use crate::simulator::{check_same_vocab, LabeledDataset, Sample};
use crate::textspace::{enumerate_texts, Text, Vocab};

/// Anything that can report the exact log-density of a text.
pub trait Density: Sync {
    fn log_density(&self, text: &Text) -> f64;

    /// True when the density is a fitted estimate rather than a known
    /// randomization mechanism.
    fn is_estimate(&self) -> bool {
        false
    }
}

impl Density for Policy {
    fn log_density(&self, text: &Text) -> f64 {
        self.log_prob(text)
    }
}

impl<D: Density + ?Sized> Density for &D {
    fn log_density(&self, text: &Text) -> f64 {
        (**self).log_density(text)
    }

    fn is_estimate(&self) -> bool {
        (**self).is_estimate()
    }
}

/// Marks a density as an estimate (for example a policy fit to the texts of
/// a dataset), which lets the importance-weighted estimators accept
/// observational data.
#[derive(Debug, Clone, Copy)]
pub struct Estimated<D>(pub D);

impl<D: Density> Density for Estimated<D> {
    fn log_density(&self, text: &Text) -> f64 {
        self.0.log_density(text)
    }

    fn is_estimate(&self) -> bool {
        true
    }
}

/// Log-densities of a policy cached over the whole enumeration. Lookups
/// return exactly what [`Policy::log_prob`] would.
#[derive(Debug, Clone)]
pub struct TabulatedDensity {
    vocab: Vocab,
    log_probs: Vec<f64>,
}

impl TabulatedDensity {
    pub fn from_policy(policy: &Policy) -> Result<Self> {
        Ok(Self { vocab: *policy.vocab(), log_probs: policy.log_probs_enumerated()? })
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }
}

impl Density for TabulatedDensity {
    fn log_density(&self, text: &Text) -> f64 {
        self.log_probs[self.vocab.index_of(text)]
    }
}

/// Uniform over every text of a vocabulary.
#[derive(Debug, Clone, Copy)]
pub struct UniformDensity(pub Vocab);

impl Density for UniformDensity {
    fn log_density(&self, _text: &Text) -> f64 {
        -(self.0.seq_len as f64) * (self.0.size as f64).ln()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightOptions {
    /// Divide the weights by their sample mean (Hajek).
    #[serde(default)]
    pub self_normalize: bool,
    /// Upper bound on each density ratio. Breaks unbiasedness.
    #[serde(default)]
    pub clip_max: Option<f64>,
}

impl WeightOptions {
    /// Plain importance weights, the setting under which the estimators are
    /// unbiased.
    pub fn raw() -> Self {
        Self::default()
    }

    pub fn hajek() -> Self {
        Self { self_normalize: true, clip_max: None }
    }

    pub fn validate(&self) -> Result<()> {
        match self.clip_max {
            Some(c) if !(c > 0.0) => Err(Error::InvalidArgument(format!("clip_max must be positive, got {c}"))),
            _ => Ok(()),
        }
    }

    pub fn stabilization(&self) -> Stabilization {
        Stabilization { self_normalized: self.self_normalize, clip_max: self.clip_max }
    }
}

/// Which transforms were applied to the raw density ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stabilization {
    pub self_normalized: bool,
    pub clip_max: Option<f64>,
}

impl fmt::Display for Stabilization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.self_normalized, self.clip_max) {
            (false, None) => f.write_str("none"),
            (true, None) => f.write_str("self-normalized"),
            (false, Some(c)) => write!(f, "clip({c})"),
            (true, Some(c)) => write!(f, "self-normalized+clip({c})"),
        }
    }
}

/// One averaged sum inside an estimator, with its per-sample contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTerm {
    pub label: &'static str,
    pub contributions: Vec<f64>,
}

impl EstimateTerm {
    pub fn mean(&self) -> f64 {
        mean(&self.contributions)
    }

    pub fn std_error(&self) -> f64 {
        let n = self.contributions.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        let var = self.contributions.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate {
    pub value: f64,
    /// The IPW estimator has one term, the outcome-model estimator one, and
    /// the doubly robust estimator two (residual term first).
    pub terms: Vec<EstimateTerm>,
    /// Combined standard error; independent terms add in variance.
    pub std_error: f64,
    pub stabilization: Stabilization,
}

impl ValueEstimate {
    pub(crate) fn from_terms(terms: Vec<EstimateTerm>, opts: &WeightOptions) -> Self {
        let value = terms.iter().map(EstimateTerm::mean).fold(0.0, |acc, m| acc + m);
        let std_error = terms.iter().map(|t| t.std_error().powi(2)).sum::<f64>().sqrt();
        Self { value, terms, std_error, stabilization: opts.stabilization() }
    }

    /// Contributions of the first term.
    pub fn per_sample(&self) -> &[f64] {
        &self.terms[0].contributions
    }

    pub fn n(&self) -> usize {
        self.terms.iter().find(|t| t.label == IPW_LABEL || t.label == RESIDUAL_LABEL).map_or(0, |t| t.contributions.len())
    }

    pub fn m(&self) -> usize {
        self.terms.iter().find(|t| t.label == OUTCOME_LABEL).map_or(0, |t| t.contributions.len())
    }
}

pub(crate) const IPW_LABEL: &str = "ipw";
pub(crate) const RESIDUAL_LABEL: &str = "residual";
pub(crate) const OUTCOME_LABEL: &str = "outcome";

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Optional clip at `ln(clip_max)`, exponentiation, then optional division
/// by the mean weight.
pub fn stabilize(log_ratios: &[f64], opts: &WeightOptions) -> Vec<f64> {
    let cap = opts.clip_max.map(f64::ln);
    let mut weights: Vec<f64> = log_ratios
        .iter()
        .map(|&lr| match cap {
            Some(c) if lr > c => c.exp(),
            _ => lr.exp(),
        })
        .collect();
    if opts.self_normalize && !weights.is_empty() {
        let m = mean(&weights);
        weights.iter_mut().for_each(|w| *w /= m);
    }
    weights
}

/// Importance weights together with `weight * target` contributions.
#[derive(Debug, Clone)]
pub(crate) struct WeightedTerm {
    pub contributions: Vec<f64>,
}

fn weighted_term<'a, P, Q>(
    policy: &P,
    proposal: &Q,
    rows: impl Iterator<Item = (&'a Text, f64)> + Clone,
    opts: &WeightOptions,
) -> Result<WeightedTerm>
where
    P: Density + ?Sized,
    Q: Density + ?Sized,
{
    opts.validate()?;
    let mut log_ratios = Vec::new();
    for (index, (text, _)) in rows.clone().enumerate() {
        let lq = proposal.log_density(text);
        if lq == f64::NEG_INFINITY || lq.is_nan() {
            return Err(Error::ZeroSupport { index });
        }
        log_ratios.push(policy.log_density(text) - lq);
    }
    if opts.clip_max.is_none() {
        if let Some(index) = log_ratios.iter().position(|lr| !lr.exp().is_finite()) {
            return Err(Error::NonFiniteWeight { index });
        }
    }
    let weights = stabilize(&log_ratios, opts);
    let mut contributions = Vec::with_capacity(weights.len());
    for (index, (w, (_, target))) in weights.iter().zip(rows).enumerate() {
        let c = w * target;
        if !w.is_finite() || !c.is_finite() {
            return Err(Error::NonFiniteWeight { index });
        }
        contributions.push(c);
    }
    Ok(WeightedTerm { contributions })
}

/// Weighted observed outcomes, minus `baseline` predictions when present.
pub(crate) fn ipw_term<P, Q>(
    policy: &P,
    samples: &[Sample],
    propensity: &Q,
    baseline: Option<&OutcomeModel>,
    opts: &WeightOptions,
) -> Result<WeightedTerm>
where
    P: Density + ?Sized,
    Q: Density + ?Sized,
{
    let rows = samples.iter().map(move |s| {
        let target = match baseline {
            Some(g) => s.outcome - g.predict(&s.text),
            None => s.outcome,
        };
        (&s.text, target)
    });
    weighted_term(policy, propensity, rows, opts)
}

/// Weighted outcome-model predictions on reference draws.
pub(crate) fn outcome_term<P, Q>(
    policy: &P,
    draws: &[Text],
    reference: &Q,
    ghat: &OutcomeModel,
    opts: &WeightOptions,
) -> Result<WeightedTerm>
where
    P: Density + ?Sized,
    Q: Density + ?Sized,
{
    let rows = draws.iter().map(|x| (x, ghat.predict(x)));
    weighted_term(policy, reference, rows, opts)
}

/// `m` texts from the reference policy. All Monte Carlo estimators and the
/// trainers draw through this so that a shared generator yields shared
/// draws.
pub fn draw_reference_texts<R: Rng + ?Sized>(f0: &Policy, m: usize, rng: &mut R) -> Vec<Text> {
    (0..m).map(|_| f0.sample(rng)).collect()
}

fn check_ipw_inputs<Q: Density + ?Sized>(policy: &Policy, ds: &LabeledDataset, propensity: &Q) -> Result<()> {
    check_same_vocab(policy.vocab(), ds.vocab())?;
    if !ds.provenance().is_randomized() && !propensity.is_estimate() {
        return Err(Error::NotRandomized);
    }
    Ok(())
}

/// Importance-weighted value estimate over a randomized dataset.
pub fn v_ipw<Q: Density + ?Sized>(
    policy: &Policy,
    ds: &LabeledDataset,
    propensity: &Q,
    opts: &WeightOptions,
) -> Result<ValueEstimate> {
    check_ipw_inputs(policy, ds, propensity)?;
    let term = ipw_term(policy, ds.samples(), propensity, None, opts)?;
    Ok(ValueEstimate::from_terms(
        vec![EstimateTerm { label: IPW_LABEL, contributions: term.contributions }],
        opts,
    ))
}

/// Outcome-model value estimate from `m` fresh draws of `f0`.
pub fn v_out<R: Rng + ?Sized>(
    policy: &Policy,
    f0: &Policy,
    ghat: &OutcomeModel,
    m: usize,
    rng: &mut R,
    opts: &WeightOptions,
) -> Result<ValueEstimate> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one reference draw".into()));
    }
    let draws = draw_reference_texts(f0, m, rng);
    v_out_on_draws(policy, f0, ghat, &draws, opts)
}

/// [`v_out`] on pre-drawn reference texts.
pub fn v_out_on_draws<Q: Density + ?Sized>(
    policy: &Policy,
    reference: &Q,
    ghat: &OutcomeModel,
    draws: &[Text],
    opts: &WeightOptions,
) -> Result<ValueEstimate> {
    check_same_vocab(policy.vocab(), &ghat.vocab)?;
    let term = outcome_term(policy, draws, reference, ghat, opts)?;
    Ok(ValueEstimate::from_terms(
        vec![EstimateTerm { label: OUTCOME_LABEL, contributions: term.contributions }],
        opts,
    ))
}

/// Doubly robust value estimate. The reference draws are taken from `rng`
/// exactly as [`v_out`] would take them.
#[allow(clippy::too_many_arguments)]
pub fn v_dr<Q: Density + ?Sized, R: Rng + ?Sized>(
    policy: &Policy,
    ds: &LabeledDataset,
    propensity: &Q,
    ghat: &OutcomeModel,
    f0: &Policy,
    m: usize,
    rng: &mut R,
    opts: &WeightOptions,
) -> Result<ValueEstimate> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one reference draw".into()));
    }
    let draws = draw_reference_texts(f0, m, rng);
    v_dr_on_draws(policy, ds, propensity, ghat, f0, &draws, opts)
}

/// [`v_dr`] on pre-drawn reference texts.
pub fn v_dr_on_draws<Q: Density + ?Sized, Q0: Density + ?Sized>(
    policy: &Policy,
    ds: &LabeledDataset,
    propensity: &Q,
    ghat: &OutcomeModel,
    reference: &Q0,
    draws: &[Text],
    opts: &WeightOptions,
) -> Result<ValueEstimate> {
    check_ipw_inputs(policy, ds, propensity)?;
    check_same_vocab(policy.vocab(), &ghat.vocab)?;
    let residual = ipw_term(policy, ds.samples(), propensity, Some(ghat), opts)?;
    let outcome = outcome_term(policy, draws, reference, ghat, opts)?;
    Ok(ValueEstimate::from_terms(
        vec![
            EstimateTerm { label: RESIDUAL_LABEL, contributions: residual.contributions },
            EstimateTerm { label: OUTCOME_LABEL, contributions: outcome.contributions },
        ],
        opts,
    ))
}

/// Exact `E_{X ~ P^f}[g_hat(X)]` by enumeration, the quantity `v_out`
/// estimates.
pub fn outcome_model_value(policy: &Policy, ghat: &OutcomeModel) -> Result<f64> {
    let texts = enumerate_texts(policy.vocab())?;
    Ok(texts.iter().map(|x| policy.log_prob(x).exp() * ghat.predict(x)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{run_experiment, Population, Provenance};
    use crate::textspace::FeatureOrder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Vocab, Population, Policy, Policy, LabeledDataset) {
        let v = Vocab::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pop = Population::random(v, 1.0, 0.7, 1.0, &mut rng).unwrap();
        let assign = Policy::random(v, 1, 0.5, &mut rng).unwrap();
        let f = Policy::random(v, 1, 0.5, &mut rng).unwrap();
        let ds = run_experiment(&pop, &assign, "pr", 300, &mut rng).unwrap();
        (v, pop, assign, f, ds)
    }

    #[test]
    fn stabilize_examples() {
        assert_eq!(stabilize(&[0.0, 0.0, 0.0], &WeightOptions::raw()), vec![1.0, 1.0, 1.0]);
        let w = stabilize(&[0.3, -2.0, 4.1, 0.0], &WeightOptions::hajek());
        assert!((w.iter().sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
        let clip = WeightOptions { self_normalize: false, clip_max: Some(10.0) };
        let w = stabilize(&[0.0, 5.0], &clip);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 10.0).abs() < 1e-12);
        let lr = [0.25, -1.5];
        let plain = stabilize(&lr, &WeightOptions::raw());
        assert_eq!(plain, vec![0.25f64.exp(), (-1.5f64).exp()]);
    }

    #[test]
    fn identical_policy_gives_sample_mean() {
        let (_, _, assign, _, ds) = setup(1);
        let est = v_ipw(&assign, &ds, &assign, &WeightOptions::raw()).unwrap();
        let y = ds.outcomes();
        assert_eq!(est.value, y.iter().sum::<f64>() / y.len() as f64);
        assert_eq!(est.per_sample(), &y[..]);
        assert_eq!(est.n(), 300);
    }

    #[test]
    fn hajek_with_constant_outcomes() {
        let (v, _, assign, f, ds) = setup(2);
        let samples = ds.samples().iter().map(|s| Sample { text: s.text.clone(), outcome: 4.0 }).collect();
        let flat = LabeledDataset::new(v, samples, ds.provenance().clone()).unwrap();
        let est = v_ipw(&f, &flat, &assign, &WeightOptions::hajek()).unwrap();
        assert!((est.value - 4.0).abs() < 1e-12);
        assert_eq!(est.stabilization.to_string(), "self-normalized");
    }

    #[test]
    fn zero_support_is_reported() {
        struct Holey;
        impl Density for Holey {
            fn log_density(&self, text: &Text) -> f64 {
                if text.tokens()[0] == 2 { f64::NEG_INFINITY } else { -2.0 }
            }
        }
        let (_, _, _, f, ds) = setup(3);
        let first = ds.samples().iter().position(|s| s.text.tokens()[0] == 2).unwrap();
        match v_ipw(&f, &ds, &Holey, &WeightOptions::raw()) {
            Err(Error::ZeroSupport { index }) => assert_eq!(index, first),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overflowing_weight_is_reported() {
        struct Tiny;
        impl Density for Tiny {
            fn log_density(&self, _: &Text) -> f64 {
                -2000.0
            }
        }
        let (_, _, _, f, ds) = setup(4);
        assert!(matches!(v_ipw(&f, &ds, &Tiny, &WeightOptions::raw()), Err(Error::NonFiniteWeight { index: 0 })));
        let clipped = WeightOptions { self_normalize: false, clip_max: Some(50.0) };
        let est = v_ipw(&f, &ds, &Tiny, &clipped).unwrap();
        assert!(est.value.is_finite());
        assert_eq!(est.stabilization.to_string(), "clip(50)");
    }

    #[test]
    fn observational_data_needs_estimated_density() {
        let (_, pop, assign, f, ds) = setup(5);
        let obs = crate::simulator::confound(
            &ds,
            &crate::simulator::ConfounderSpec::Negation,
            &pop,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(matches!(v_ipw(&f, &obs, &assign, &WeightOptions::raw()), Err(Error::NotRandomized)));
        assert!(v_ipw(&f, &obs, &Estimated(&assign), &WeightOptions::raw()).is_ok());
    }

    #[test]
    fn v_out_degenerate_cases() {
        let (v, pop, assign, f, _) = setup(6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let zero = OutcomeModel::zero(v, FeatureOrder::Bigram);
        assert_eq!(v_out(&f, &assign, &zero, 500, &mut rng, &WeightOptions::raw()).unwrap().value, 0.0);

        let ghat = OutcomeModel::exact(&pop);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let est = v_out(&assign, &assign, &ghat, 400, &mut r1, &WeightOptions::raw()).unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let draws = draw_reference_texts(&assign, 400, &mut r2);
        let direct = draws.iter().map(|x| ghat.predict(x)).sum::<f64>() / 400.0;
        assert_eq!(est.value, direct);
        assert_eq!(est.m(), 400);
    }

    #[test]
    fn dr_degenerates_to_ipw_and_out() {
        let (v, pop, assign, f, _) = setup(7);
        let opts = WeightOptions::raw();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ds = run_experiment(&pop, &assign, "pr", 200, &mut rng).unwrap();

        let zero = OutcomeModel::zero(v, FeatureOrder::Bigram);
        let ipw = v_ipw(&f, &ds, &assign, &opts).unwrap();
        let dr = v_dr(&f, &ds, &assign, &zero, &assign, 300, &mut ChaCha8Rng::seed_from_u64(1), &opts).unwrap();
        assert_eq!(dr.value.to_bits(), ipw.value.to_bits());

        let noiseless = Population::new(v, pop.g_weights.clone(), 0.0).unwrap();
        let ds0 = run_experiment(&noiseless, &assign, "pr", 200, &mut rng).unwrap();
        let exact = OutcomeModel::exact(&noiseless);
        let dr = v_dr(&f, &ds0, &assign, &exact, &assign, 300, &mut ChaCha8Rng::seed_from_u64(2), &opts).unwrap();
        let out = v_out(&f, &assign, &exact, 300, &mut ChaCha8Rng::seed_from_u64(2), &opts).unwrap();
        assert!(dr.terms[0].contributions.iter().all(|&c| c == 0.0));
        assert_eq!(dr.value.to_bits(), out.value.to_bits());
        assert_eq!((dr.n(), dr.m()), (200, 300));
    }

    #[test]
    fn dr_std_error_adds_in_variance() {
        let (v, pop, assign, f, ds) = setup(8);
        let ghat = OutcomeModel::exact(&pop).negated();
        let est = v_dr(&f, &ds, &assign, &ghat, &assign, 100, &mut ChaCha8Rng::seed_from_u64(3), &WeightOptions::raw()).unwrap();
        let a = est.terms[0].std_error();
        let b = est.terms[1].std_error();
        assert!((est.std_error - (a * a + b * b).sqrt()).abs() < 1e-15);
        assert!(est.std_error > 0.0);
        let _ = v;
    }

    #[test]
    fn tabulated_density_matches_policy() {
        let (v, _, _, f, _) = setup(9);
        let tab = TabulatedDensity::from_policy(&f).unwrap();
        for x in enumerate_texts(&v).unwrap() {
            assert_eq!(tab.log_density(&x).to_bits(), f.log_prob(&x).to_bits());
        }
        let u = UniformDensity(v);
        let p = Policy::uniform(v, 2).unwrap();
        let x = v.text_at(5);
        assert!((u.log_density(&x) - p.log_prob(&x)).abs() < 1e-12);
    }

    #[test]
    fn provenance_of_randomized_dataset() {
        let (_, _, _, _, ds) = setup(10);
        assert_eq!(ds.provenance(), &Provenance::Randomized { assignment: "pr".into() });
    }
}
