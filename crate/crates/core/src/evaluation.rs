//! Oracle-judged win rates, reward tables, confounding impact and Monte
//! Carlo bias/variance experiments.
//!
//! The judge is the population's expected outcome `g`: of two texts, the one
//! with larger `g` wins, and texts whose `g` agree to within
//! [`TIE_TOLERANCE`] split the point.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    draw_reference_texts, v_dr_on_draws, v_ipw, v_out_on_draws, Density, Estimated, TabulatedDensity, WeightOptions,
};
use crate::outcome_model::OutcomeModel;
use crate::policy::Policy;
use crate::simulator::{check_same_vocab, run_experiment, true_value, LabeledDataset, Population};
use crate::textspace::{FeatureOrder, Text};

pub const TIE_TOLERANCE: f64 = 1e-12;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    #[default]
    Normal,
    Wilson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRateResult {
    pub wins: usize,
    pub ties: usize,
    pub total: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl WinRateResult {
    fn from_counts(wins: usize, ties: usize, total: usize, method: CiMethod) -> Self {
        let n = total as f64;
        let rate = (wins as f64 + 0.5 * ties as f64) / n;
        let (lo, hi) = match method {
            CiMethod::Normal => {
                let half = Z95 * (rate * (1.0 - rate) / n).sqrt();
                (rate - half, rate + half)
            }
            CiMethod::Wilson => {
                let z2 = Z95 * Z95;
                let denom = 1.0 + z2 / n;
                let center = (rate + z2 / (2.0 * n)) / denom;
                let half = Z95 / denom * (rate * (1.0 - rate) / n + z2 / (4.0 * n * n)).sqrt();
                (center - half, center + half)
            }
        };
        Self { wins, ties, total, rate, ci_low: lo.clamp(0.0, 1.0), ci_high: hi.clamp(0.0, 1.0) }
    }

    pub fn covers(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

/// Judges pre-drawn pairs `(xs_a[i], xs_b[i])`.
pub fn judge_pairs(xs_a: &[Text], xs_b: &[Text], pop: &Population, method: CiMethod) -> Result<WinRateResult> {
    if xs_a.len() != xs_b.len() {
        return Err(Error::InvalidArgument(format!("{} texts against {}", xs_a.len(), xs_b.len())));
    }
    if xs_a.is_empty() {
        return Err(Error::InvalidArgument("win rate needs at least one pair".into()));
    }
    let (mut wins, mut ties) = (0, 0);
    for (a, b) in xs_a.iter().zip(xs_b) {
        let d = pop.g(a) - pop.g(b);
        if d.abs() <= TIE_TOLERANCE {
            ties += 1;
        } else if d > 0.0 {
            wins += 1;
        }
    }
    Ok(WinRateResult::from_counts(wins, ties, xs_a.len(), method))
}

/// Oracle win rate of `a` over `b` with a normal-approximation interval.
pub fn win_rate<R: rand::Rng + ?Sized>(
    a: &Policy,
    b: &Policy,
    pop: &Population,
    pairs: usize,
    rng: &mut R,
) -> Result<WinRateResult> {
    win_rate_with(a, b, pop, pairs, rng, CiMethod::Normal)
}

/// Per pair, one text from `a` then one from `b`.
pub fn win_rate_with<R: rand::Rng + ?Sized>(
    a: &Policy,
    b: &Policy,
    pop: &Population,
    pairs: usize,
    rng: &mut R,
    method: CiMethod,
) -> Result<WinRateResult> {
    check_same_vocab(a.vocab(), &pop.vocab)?;
    check_same_vocab(b.vocab(), &pop.vocab)?;
    let mut xs_a = Vec::with_capacity(pairs);
    let mut xs_b = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        xs_a.push(a.sample(rng));
        xs_b.push(b.sample(rng));
    }
    judge_pairs(&xs_a, &xs_b, pop, method)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingImpact {
    pub method: String,
    /// `rate - 0.5`; negative means confounding hurts.
    pub impact: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub win_rate: WinRateResult,
}

impl ConfoundingImpact {
    pub fn significantly_negative(&self) -> bool {
        self.ci_high < 0.0
    }

    pub fn covers_zero(&self) -> bool {
        self.ci_low <= 0.0 && 0.0 <= self.ci_high
    }
}

/// Win rate of the confounded run over the clean one, shifted by one half.
pub fn confounding_impact<R: rand::Rng + ?Sized>(
    method: &str,
    trained_confounded: &Policy,
    trained_clean: &Policy,
    pop: &Population,
    pairs: usize,
    rng: &mut R,
) -> Result<ConfoundingImpact> {
    let wr = win_rate(trained_confounded, trained_clean, pop, pairs, rng)?;
    Ok(ConfoundingImpact {
        method: method.to_string(),
        impact: wr.rate - 0.5,
        ci_low: wr.ci_low - 0.5,
        ci_high: wr.ci_high - 0.5,
        win_rate: wr,
    })
}

pub fn impacts_csv(rows: &[ConfoundingImpact]) -> String {
    let mut out = String::from("method,impact,ci_low,ci_high,wins,ties,total\n");
    for r in rows {
        let w = &r.win_rate;
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.method, r.impact, r.ci_low, r.ci_high, w.wins, w.ties, w.total);
    }
    out
}

// ── Reward table ──

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub policy: String,
    pub v_dr: f64,
    pub v_ipw: f64,
    pub v_out: f64,
    pub true_value: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    pub rows: Vec<RewardRow>,
}

impl RewardTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,v_dr,v_ipw,v_out,true_value\n");
        for r in &self.rows {
            let tv = r.true_value.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", r.policy, r.v_dr, r.v_ipw, r.v_out, tv);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.policy.len()).max().unwrap_or(0).max(6);
        let mut out = format!("{:<width$}  {:>10}  {:>10}  {:>10}  {:>10}\n", "policy", "V_DR", "V_IPW", "V_out", "V(f)");
        for r in &self.rows {
            let tv = r.true_value.map(|v| format!("{v:>10.4}")).unwrap_or_else(|| format!("{:>10}", "-"));
            let _ = writeln!(out, "{:<width$}  {:>10.4}  {:>10.4}  {:>10.4}  {tv}", r.policy, r.v_dr, r.v_ipw, r.v_out);
        }
        out
    }

    /// Policy names sorted by decreasing `key`.
    pub fn ranking_by(&self, key: impl Fn(&RewardRow) -> f64) -> Vec<String> {
        let mut rows: Vec<&RewardRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| key(b).total_cmp(&key(a)));
        rows.into_iter().map(|r| r.policy.clone()).collect()
    }
}

/// Inputs shared by every row of a reward table.
pub struct RewardTableInputs<'a> {
    pub dataset: &'a LabeledDataset,
    pub propensity: &'a dyn Density,
    pub outcome_model: &'a OutcomeModel,
    pub reference: &'a Policy,
    pub m: usize,
    pub opts: WeightOptions,
    pub eval_seed: u64,
    pub population: Option<&'a Population>,
}

/// Evaluates every policy on the same dataset and the same `m` reference
/// draws, so rows differ only through the policies.
pub fn reward_table(policies: &[(String, Policy)], inputs: &RewardTableInputs<'_>) -> Result<RewardTable> {
    let draws = draw_reference_texts(inputs.reference, inputs.m, &mut ChaCha8Rng::seed_from_u64(inputs.eval_seed));
    let tabulated = TabulatedDensity::from_policy(inputs.reference).ok();
    let reference: &dyn Density = match &tabulated {
        Some(t) => t,
        None => inputs.reference,
    };
    let pop = inputs.population.filter(|p| p.vocab.is_enumerable());
    let mut rows = Vec::with_capacity(policies.len());
    for (name, policy) in policies {
        check_same_vocab(policy.vocab(), inputs.dataset.vocab())?;
        let dr = v_dr_on_draws(policy, inputs.dataset, inputs.propensity, inputs.outcome_model, reference, &draws, &inputs.opts)?;
        let ipw = v_ipw(policy, inputs.dataset, inputs.propensity, &inputs.opts)?;
        let out = v_out_on_draws(policy, reference, inputs.outcome_model, &draws, &inputs.opts)?;
        rows.push(RewardRow {
            policy: name.clone(),
            v_dr: dr.value,
            v_ipw: ipw.value,
            v_out: out.value,
            true_value: pop.map(|p| true_value(policy, p)).transpose()?,
        });
    }
    Ok(RewardTable { rows })
}

// ── Bias and variance ──

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorId {
    Ipw,
    Out,
    Dr,
}

impl EstimatorId {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorId::Ipw => "ipw",
            EstimatorId::Out => "out",
            EstimatorId::Dr => "dr",
        }
    }
}

/// How the randomization density is supplied to the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PropensitySpec {
    True,
    /// `mle_fit` with add-`smoothing` counts on `samples` fresh assignment
    /// draws.
    Estimated { samples: usize, smoothing: f64 },
}

/// How the outcome model is built. Fitted variants use a fresh sample that
/// is disjoint from every replicate dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OutcomeSpec {
    Zero,
    Exact,
    /// Fit on the negation of a fresh randomized dataset.
    Negated { samples: usize },
    Fitted { order: FeatureOrder, lambda: f64, samples: usize },
    /// Random weights of the given scale, unrelated to `g`.
    Noise { scale: f64 },
}

/// One configured combination of estimator inputs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub population: Population,
    pub target: Policy,
    pub assignment: Policy,
    pub reference: Policy,
    pub n: usize,
    pub m: usize,
    pub propensity: PropensitySpec,
    pub outcome: OutcomeSpec,
    pub opts: WeightOptions,
}

/// Nuisance estimates built once per scenario.
pub struct ScenarioInputs {
    pub propensity: TabulatedDensity,
    pub propensity_estimated: bool,
    pub outcome_model: OutcomeModel,
}

impl Scenario {
    /// Builds `P^R` (or its estimate) and `g_hat` from `rng`.
    pub fn build_inputs<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<ScenarioInputs> {
        let vocab = self.population.vocab;
        let (propensity, propensity_estimated) = match &self.propensity {
            PropensitySpec::True => (TabulatedDensity::from_policy(&self.assignment)?, false),
            PropensitySpec::Estimated { samples, smoothing } => {
                let texts = draw_reference_texts(&self.assignment, *samples, rng);
                let fitted = Policy::mle_fit(&texts, vocab, self.assignment.order(), *smoothing)?;
                (TabulatedDensity::from_policy(&fitted)?, true)
            }
        };
        let outcome_model = match &self.outcome {
            OutcomeSpec::Zero => OutcomeModel::zero(vocab, FeatureOrder::Bigram),
            OutcomeSpec::Exact => OutcomeModel::exact(&self.population),
            OutcomeSpec::Negated { samples } => {
                let ds = run_experiment(&self.population, &self.assignment, "aux", *samples, rng)?;
                let neg = crate::simulator::confound(&ds, &crate::simulator::ConfounderSpec::Negation, &self.population, rng)?;
                OutcomeModel::fit(&neg, FeatureOrder::Bigram, crate::outcome_model::DEFAULT_RIDGE_LAMBDA)?
            }
            OutcomeSpec::Fitted { order, lambda, samples } => {
                let ds = run_experiment(&self.population, &self.assignment, "aux", *samples, rng)?;
                OutcomeModel::fit(&ds, *order, *lambda)?
            }
            OutcomeSpec::Noise { scale } => {
                use rand_distr::{Distribution, StandardNormal};
                let dim = vocab.feature_dim(FeatureOrder::Bigram);
                let w = (0..dim).map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z }).collect::<Vec<f64>>();
                OutcomeModel::from_weights(vocab, FeatureOrder::Bigram, w)?
            }
        };
        Ok(ScenarioInputs { propensity, propensity_estimated, outcome_model })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceReport {
    pub estimator: EstimatorId,
    pub scenario: String,
    pub replicates: usize,
    pub mean: f64,
    /// Enumerated `V(f)`.
    pub true_value: f64,
    pub bias: f64,
    pub se_mean: f64,
    pub variance: f64,
}

impl BiasVarianceReport {
    fn from_estimates(estimator: EstimatorId, scenario: &str, estimates: &[f64], truth: f64) -> Self {
        let r = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / r;
        let variance = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (r - 1.0);
        Self {
            estimator,
            scenario: scenario.to_string(),
            replicates: estimates.len(),
            mean,
            true_value: truth,
            bias: mean - truth,
            se_mean: (variance / r).sqrt(),
            variance,
        }
    }

    /// `|bias|` in units of the standard error of the mean.
    pub fn bias_in_se(&self) -> f64 {
        self.bias.abs() / self.se_mean
    }
}

pub fn reports_csv(reports: &[BiasVarianceReport]) -> String {
    let mut out = String::from("scenario,estimator,replicates,mean,true_value,bias,se_mean,variance\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.scenario,
            r.estimator.name(),
            r.replicates,
            r.mean,
            r.true_value,
            r.bias,
            r.se_mean,
            r.variance
        );
    }
    out
}

/// `x,y` CSV for external plotting.
pub fn plot_data_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("x,y\n");
    for (x, y) in points {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

/// Runs `replicates` independent experiments and evaluates every requested
/// estimator on each one. Nuisances are built from `seed` once; replicate
/// `r` draws from stream `r + 1` of the same seed. Output is independent of
/// the thread count.
pub fn bias_variance_experiment(
    scenario: &Scenario,
    estimators: &[EstimatorId],
    replicates: usize,
    seed: u64,
) -> Result<Vec<BiasVarianceReport>> {
    if replicates < 2 {
        return Err(Error::InvalidArgument("bias/variance needs at least two replicates".into()));
    }
    let pop = &scenario.population;
    let inputs = scenario.build_inputs(&mut ChaCha8Rng::seed_from_u64(seed))?;
    let truth = true_value(&scenario.target, pop)?;
    let target = &scenario.target;
    let reference = TabulatedDensity::from_policy(&scenario.reference)?;
    let needs_draws = estimators.iter().any(|e| *e != EstimatorId::Ipw);

    let per_replicate: Vec<Result<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64 + 1);
            let ds = run_experiment(pop, &scenario.assignment, "assignment", scenario.n, &mut rng)?;
            let draws =
                if needs_draws { draw_reference_texts(&scenario.reference, scenario.m, &mut rng) } else { Vec::new() };
            estimators
                .iter()
                .map(|e| estimate_once(*e, target, &ds, &inputs, &reference, &draws, &scenario.opts))
                .collect()
        })
        .collect();

    let mut columns = vec![Vec::with_capacity(replicates); estimators.len()];
    for row in per_replicate {
        for (col, v) in columns.iter_mut().zip(row?) {
            col.push(v);
        }
    }
    Ok(estimators
        .iter()
        .zip(&columns)
        .map(|(e, col)| BiasVarianceReport::from_estimates(*e, &scenario.id, col, truth))
        .collect())
}

fn estimate_once(
    id: EstimatorId,
    target: &Policy,
    ds: &LabeledDataset,
    inputs: &ScenarioInputs,
    reference: &TabulatedDensity,
    draws: &[Text],
    opts: &WeightOptions,
) -> Result<f64> {
    let est = match (id, inputs.propensity_estimated) {
        (EstimatorId::Out, _) => v_out_on_draws(target, reference, &inputs.outcome_model, draws, opts)?,
        (EstimatorId::Ipw, false) => v_ipw(target, ds, &inputs.propensity, opts)?,
        (EstimatorId::Ipw, true) => v_ipw(target, ds, &Estimated(&inputs.propensity), opts)?,
        (EstimatorId::Dr, false) => {
            v_dr_on_draws(target, ds, &inputs.propensity, &inputs.outcome_model, reference, draws, opts)?
        }
        (EstimatorId::Dr, true) => {
            v_dr_on_draws(target, ds, &Estimated(&inputs.propensity), &inputs.outcome_model, reference, draws, opts)?
        }
    };
    Ok(est.value)
}

/// Every scenario with every estimator, concatenated in input order.
pub fn bias_variance_suite(
    scenarios: &[Scenario],
    estimators: &[EstimatorId],
    replicates: usize,
    seed: u64,
) -> Result<Vec<BiasVarianceReport>> {
    let mut out = Vec::new();
    for (i, s) in scenarios.iter().enumerate() {
        out.extend(bias_variance_experiment(s, estimators, replicates, seed.wrapping_add(i as u64))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textspace::Vocab;

    fn pop2() -> Population {
        let v = Vocab::new(2, 1).unwrap();
        Population::new(v, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 0.0).unwrap()
    }

    #[test]
    fn point_masses_give_certain_wins() {
        let pop = pop2();
        let v = pop.vocab;
        let a = Policy::point_mass(v, 1, &Text::new(vec![1], &v).unwrap(), 60.0).unwrap();
        let b = Policy::point_mass(v, 1, &Text::new(vec![0], &v).unwrap(), 60.0).unwrap();
        let wr = win_rate(&a, &b, &pop, 200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((wr.wins, wr.ties, wr.rate), (200, 0, 1.0));
        assert_eq!((wr.ci_low, wr.ci_high), (1.0, 1.0));
        let wr = win_rate(&a, &a, &pop, 200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((wr.ties, wr.rate), (200, 0.5));
    }

    #[test]
    fn self_comparison_covers_half() {
        let pop = pop2();
        let u = Policy::uniform(pop.vocab, 1).unwrap();
        let wr = win_rate(&u, &u, &pop, 2000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(wr.covers(0.5), "{wr:?}");
        assert!(wr.wins + wr.ties <= wr.total);
    }

    #[test]
    fn shared_draws_are_antisymmetric() {
        let v = Vocab::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pop = Population::random(v, 0.0, 1.0, 1.0, &mut rng).unwrap();
        let a = Policy::random(v, 1, 1.0, &mut rng).unwrap();
        let b = Policy::random(v, 2, 1.0, &mut rng).unwrap();
        let xa: Vec<Text> = (0..500).map(|_| a.sample(&mut rng)).collect();
        let xb: Vec<Text> = (0..500).map(|_| b.sample(&mut rng)).collect();
        let ab = judge_pairs(&xa, &xb, &pop, CiMethod::Normal).unwrap();
        let ba = judge_pairs(&xb, &xa, &pop, CiMethod::Normal).unwrap();
        assert!((ab.rate + ba.rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wilson_interval_is_inside_unit_interval() {
        let wr = WinRateResult::from_counts(10, 0, 10, CiMethod::Wilson);
        assert!(wr.ci_low > 0.6 && (wr.ci_high - 1.0).abs() < 1e-12);
        let wr = WinRateResult::from_counts(50, 0, 100, CiMethod::Wilson);
        assert!((wr.ci_low + wr.ci_high - 1.0).abs() < 1e-12);
    }

    #[test]
    fn impact_of_identical_policies_covers_zero() {
        let pop = pop2();
        let u = Policy::uniform(pop.vocab, 1).unwrap();
        let imp = confounding_impact("cpo", &u, &u, &pop, 1000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(imp.covers_zero());
        assert_eq!(imp.impact, imp.win_rate.rate - 0.5);
    }

    fn table_fixture(ghat: Option<OutcomeModel>) -> RewardTable {
        let v = Vocab::new(3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pop = Population::random(v, 1.0, 1.0, 1.0, &mut rng).unwrap();
        let pr = Policy::uniform(v, 1).unwrap();
        let ds = run_experiment(&pop, &pr, "uniform", 300, &mut rng).unwrap();
        let f = Policy::random(v, 1, 0.5, &mut rng).unwrap();
        let ghat = ghat.unwrap_or_else(|| OutcomeModel::exact(&pop));
        let inputs = RewardTableInputs {
            dataset: &ds,
            propensity: &pr,
            outcome_model: &ghat,
            reference: &pr,
            m: 400,
            opts: WeightOptions::raw(),
            eval_seed: 77,
            population: Some(&pop),
        };
        reward_table(&[("a".into(), f.clone()), ("b".into(), f), ("u".into(), pr.clone())], &inputs).unwrap()
    }

    #[test]
    fn identical_policies_give_identical_rows() {
        let t = table_fixture(None);
        let (a, b) = (&t.rows[0], &t.rows[1]);
        assert_eq!(a.v_dr.to_bits(), b.v_dr.to_bits());
        assert_eq!(a.v_ipw.to_bits(), b.v_ipw.to_bits());
        assert_eq!(a.v_out.to_bits(), b.v_out.to_bits());
        assert!(t.to_csv().starts_with("policy,v_dr,v_ipw,v_out,true_value\n"));
        assert_eq!(t.to_text().lines().count(), 4);
    }

    #[test]
    fn zero_outcome_model_columns() {
        let v = Vocab::new(3, 2).unwrap();
        let t = table_fixture(Some(OutcomeModel::zero(v, FeatureOrder::Bigram)));
        for r in &t.rows {
            assert_eq!(r.v_dr.to_bits(), r.v_ipw.to_bits());
            assert_eq!(r.v_out, 0.0);
        }
    }

    #[test]
    fn bias_variance_is_thread_count_independent() {
        let v = Vocab::new(2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pop = Population::random(v, 1.0, 0.5, 1.0, &mut rng).unwrap();
        let s = Scenario {
            id: "t".into(),
            target: Policy::random(v, 1, 0.5, &mut rng).unwrap(),
            assignment: Policy::uniform(v, 1).unwrap(),
            reference: Policy::uniform(v, 1).unwrap(),
            population: pop,
            n: 50,
            m: 50,
            propensity: PropensitySpec::True,
            outcome: OutcomeSpec::Exact,
            opts: WeightOptions::raw(),
        };
        let est = [EstimatorId::Ipw, EstimatorId::Dr, EstimatorId::Out];
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = one.install(|| bias_variance_experiment(&s, &est, 40, 5)).unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let b = four.install(|| bias_variance_experiment(&s, &est, 40, 5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].bias, a[0].mean - a[0].true_value);
        assert!(bias_variance_experiment(&s, &est, 1, 5).is_err());
        assert!(reports_csv(&a).lines().count() == 4);
    }
}
