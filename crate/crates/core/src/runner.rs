//! Experiment pipeline: simulate, fit outcome models, train, evaluate and
//! report. Each stage has an in-memory form and a file-backed subcommand
//! that persists its artifacts and records them in `manifest.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acceptance::{self, CriterionResult};
use crate::config::{ExperimentConfig, OutcomeSource};
use crate::error::{Error, Result};
use crate::estimators::{Density, WeightOptions};
use crate::evaluation::{
    confounding_impact, impacts_csv, plot_data_csv, reward_table, win_rate, ConfoundingImpact, RewardTable,
    RewardTableInputs, WinRateResult,
};
use crate::optimizer::{fine_tune, train, Objective, TrainInputs, TrainTrace};
use crate::outcome_model::OutcomeModel;
use crate::policy::Policy;
use crate::seeds;
use crate::simulator::{confound, run_experiment, LabeledDataset, Population};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ft,
    Cpo,
    DrCpo,
    OoRlhf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ft, Method::Cpo, Method::DrCpo, Method::OoRlhf];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ft" => Some(Method::Ft),
            "cpo" => Some(Method::Cpo),
            "dr-cpo" | "drcpo" => Some(Method::DrCpo),
            "oo-rlhf" | "oorlhf" => Some(Method::OoRlhf),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ft => "ft",
            Method::Cpo => "cpo",
            Method::DrCpo => "dr-cpo",
            Method::OoRlhf => "oo-rlhf",
        }
    }

    pub fn objective(&self) -> Option<Objective> {
        match self {
            Method::Ft => None,
            Method::Cpo => Some(Objective::Cpo),
            Method::DrCpo => Some(Objective::DrCpo),
            Method::OoRlhf => Some(Objective::OoRlhf),
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

/// Which outcome model and seed a training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// The configured outcome-model source.
    Clean,
    /// The outcome model fit on the confounded dataset.
    Confounded,
    /// The configured source with an independent training seed.
    Reseeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrainTarget {
    pub method: Method,
    pub variant: Variant,
}

impl TrainTarget {
    pub fn clean(method: Method) -> Self {
        Self { method, variant: Variant::Clean }
    }

    /// `method`, `method+confounded` or `method+reseed`.
    pub fn parse(s: &str) -> Result<Self> {
        let (m, v) = s.split_once('+').unwrap_or((s, ""));
        let method = Method::parse(m).ok_or_else(|| Error::InvalidArgument(format!("unknown method {m:?}")))?;
        let variant = match v {
            "" => Variant::Clean,
            "confounded" => Variant::Confounded,
            "reseed" => Variant::Reseeded,
            other => return Err(Error::InvalidArgument(format!("unknown variant {other:?}"))),
        };
        if method == Method::Ft && variant != Variant::Clean {
            return Err(Error::InvalidArgument("ft has no variants".into()));
        }
        Ok(Self { method, variant })
    }

    pub fn name(&self) -> String {
        match self.variant {
            Variant::Clean => self.method.name().to_string(),
            Variant::Confounded => format!("{}+confounded", self.method.name()),
            Variant::Reseeded => format!("{}+reseed", self.method.name()),
        }
    }

    fn seed(&self, master: u64) -> u64 {
        let v = match self.variant {
            Variant::Clean => 0,
            Variant::Confounded => 1,
            Variant::Reseeded => 2,
        };
        seeds::train(master, self.method.index(), v)
    }
}

// ── In-memory stages ──

#[derive(Debug, Clone)]
pub struct Simulated {
    pub population: Population,
    pub assignment: Policy,
    pub randomized: LabeledDataset,
    pub observational: Option<LabeledDataset>,
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulated> {
    let population = cfg.population()?;
    let assignment = cfg.assignment()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, seeds::SIMULATE));
    let randomized = run_experiment(&population, &assignment, "assignment", cfg.data.n, &mut rng)?;
    let observational = match &cfg.data.confounder {
        Some(spec) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, seeds::CONFOUND));
            Some(confound(&randomized, spec, &population, &mut rng)?)
        }
        None => None,
    };
    Ok(Simulated { population, assignment, randomized, observational })
}

#[derive(Debug, Clone)]
pub struct OutcomeModels {
    pub randomized: OutcomeModel,
    pub confounded: Option<OutcomeModel>,
}

impl OutcomeModels {
    pub fn configured(&self, cfg: &ExperimentConfig) -> Result<&OutcomeModel> {
        match cfg.outcome_model.source {
            OutcomeSource::Randomized => Ok(&self.randomized),
            OutcomeSource::Confounded => self.confounded.as_ref().ok_or(Error::MissingInput("confounded outcome model")),
        }
    }

    fn for_variant(&self, cfg: &ExperimentConfig, variant: Variant) -> Result<&OutcomeModel> {
        match variant {
            Variant::Confounded => self.confounded.as_ref().ok_or(Error::MissingInput("confounded outcome model")),
            _ => self.configured(cfg),
        }
    }
}

pub fn fit_outcome_models(cfg: &ExperimentConfig, sim: &Simulated) -> Result<OutcomeModels> {
    let spec = &cfg.outcome_model;
    let randomized = OutcomeModel::fit(&sim.randomized, spec.feature_order, spec.ridge_lambda)?;
    let confounded =
        sim.observational.as_ref().map(|d| OutcomeModel::fit(d, spec.feature_order, spec.ridge_lambda)).transpose()?;
    Ok(OutcomeModels { randomized, confounded })
}

pub fn fine_tuned(cfg: &ExperimentConfig, sim: &Simulated) -> Result<Policy> {
    fine_tune(&sim.randomized, cfg.ft.order, cfg.ft.smoothing)
}

/// Trains one target from the fine-tuned policy, which also serves as the
/// reference policy for outcome-model draws.
pub fn train_target(
    cfg: &ExperimentConfig,
    sim: &Simulated,
    models: &OutcomeModels,
    ft: &Policy,
    target: TrainTarget,
) -> Result<(Policy, Option<TrainTrace>)> {
    let Some(objective) = target.method.objective() else {
        return Ok((ft.clone(), None));
    };
    let tc = cfg.train_config(objective, target.seed(cfg.seed));
    let ghat = if objective == Objective::Cpo { None } else { Some(models.for_variant(cfg, target.variant)?) };
    let inputs = TrainInputs {
        dataset: Some(&sim.randomized),
        propensity: Some(&sim.assignment as &dyn Density),
        outcome_model: ghat,
        reference: Some(ft),
    };
    let (policy, trace) = train(&tc, ft, &inputs, Some(&sim.population))?;
    Ok((policy, Some(trace)))
}

/// Every target `reproduce-all` trains: the configured methods plus the
/// variants the confounding-impact table compares against.
pub fn all_targets(cfg: &ExperimentConfig) -> Vec<TrainTarget> {
    let mut out: Vec<TrainTarget> = configured_methods(cfg).into_iter().map(TrainTarget::clean).collect();
    for m in configured_methods(cfg) {
        match m {
            Method::Cpo => out.push(TrainTarget { method: m, variant: Variant::Reseeded }),
            Method::DrCpo | Method::OoRlhf if cfg.data.confounder.is_some() => {
                out.push(TrainTarget { method: m, variant: Variant::Confounded })
            }
            _ => {}
        }
    }
    out
}

fn configured_methods(cfg: &ExperimentConfig) -> Vec<Method> {
    cfg.evaluation.methods.iter().filter_map(|m| Method::parse(m)).collect()
}

/// Baseline each impact row compares against.
fn impact_pairs(policies: &BTreeMap<String, Policy>) -> Vec<(Method, TrainTarget)> {
    [
        (Method::Cpo, Variant::Reseeded),
        (Method::DrCpo, Variant::Confounded),
        (Method::OoRlhf, Variant::Confounded),
    ]
    .into_iter()
    .map(|(method, variant)| (method, TrainTarget { method, variant }))
    .filter(|(m, t)| policies.contains_key(m.name()) && policies.contains_key(&t.name()))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinCell {
    pub a: String,
    pub b: String,
    pub result: WinRateResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub win_rates: Vec<WinCell>,
    pub reward_table: RewardTable,
    pub impacts: Vec<ConfoundingImpact>,
}

impl Evaluation {
    pub fn win(&self, a: &str, b: &str) -> Option<&WinRateResult> {
        self.win_rates.iter().find(|c| c.a == a && c.b == b).map(|c| &c.result)
    }

    pub fn impact(&self, method: &str) -> Option<&ConfoundingImpact> {
        self.impacts.iter().find(|i| i.method == method)
    }

    pub fn true_value(&self, policy: &str) -> Option<f64> {
        self.reward_table.rows.iter().find(|r| r.policy == policy).and_then(|r| r.true_value)
    }

    pub fn win_rates_csv(&self) -> String {
        let mut out = String::from("a,b,wins,ties,total,rate,ci_low,ci_high\n");
        for c in &self.win_rates {
            let r = &c.result;
            let _ = writeln!(out, "{},{},{},{},{},{},{},{}", c.a, c.b, r.wins, r.ties, r.total, r.rate, r.ci_low, r.ci_high);
        }
        out
    }

    pub fn win_rates_text(&self) -> String {
        let mut out = format!("{:<10} {:<10} {:>7} {:>17}\n", "a", "b", "rate", "95% CI");
        for c in &self.win_rates {
            let r = &c.result;
            let ci = format!("[{:.3}, {:.3}]", r.ci_low, r.ci_high);
            let _ = writeln!(out, "{:<10} {:<10} {:>7.3} {ci:>17}", c.a, c.b, r.rate);
        }
        out
    }

    /// Impact per method as `x,y` with `x` the row index.
    pub fn impact_plot_data(&self) -> String {
        let pts: Vec<(f64, f64)> = self.impacts.iter().enumerate().map(|(i, r)| (i as f64, r.impact)).collect();
        plot_data_csv(&pts)
    }
}

/// Win-rate matrix over the configured clean methods (both orders and
/// self-comparisons), the reward table, and the confounding-impact rows.
pub fn evaluate(
    cfg: &ExperimentConfig,
    sim: &Simulated,
    models: &OutcomeModels,
    policies: &BTreeMap<String, Policy>,
) -> Result<Evaluation> {
    let methods: Vec<Method> = configured_methods(cfg);
    for m in &methods {
        if !policies.contains_key(m.name()) {
            return Err(Error::MissingInput("trained policy for every configured method"));
        }
    }
    let pairs = cfg.evaluation.pairs;
    let mut win_rates = Vec::new();
    for a in &methods {
        for b in &methods {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::win_rate(cfg.seed, a.index(), b.index()));
            let result = win_rate(&policies[a.name()], &policies[b.name()], &sim.population, pairs, &mut rng)?;
            win_rates.push(WinCell { a: a.name().into(), b: b.name().into(), result });
        }
    }

    let ft = fine_tuned(cfg, sim)?;
    let named: Vec<(String, Policy)> = methods.iter().map(|m| (m.name().to_string(), policies[m.name()].clone())).collect();
    let opts = WeightOptions { self_normalize: cfg.evaluation.self_normalize, clip_max: None };
    let table = reward_table(
        &named,
        &RewardTableInputs {
            dataset: &sim.randomized,
            propensity: &sim.assignment,
            outcome_model: models.configured(cfg)?,
            reference: &ft,
            m: cfg.evaluation.m,
            opts,
            eval_seed: seeds::derive(cfg.seed, seeds::REWARD_TABLE),
            population: Some(&sim.population),
        },
    )?;

    let mut impacts = Vec::new();
    for (method, other) in impact_pairs(policies) {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::impact(cfg.seed, method.index()));
        impacts.push(confounding_impact(
            method.name(),
            &policies[&other.name()],
            &policies[method.name()],
            &sim.population,
            pairs,
            &mut rng,
        )?);
    }
    Ok(Evaluation { win_rates, reward_table: table, impacts })
}

/// Everything the pipeline produces, held in memory.
pub struct PipelineOutputs {
    pub simulated: Simulated,
    pub models: OutcomeModels,
    pub policies: BTreeMap<String, Policy>,
    pub traces: BTreeMap<String, TrainTrace>,
    pub evaluation: Evaluation,
}

/// simulate → fit → train every target → evaluate, without touching disk.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutputs> {
    let simulated = simulate(cfg)?;
    let models = fit_outcome_models(cfg, &simulated)?;
    let ft = fine_tuned(cfg, &simulated)?;
    let mut policies = BTreeMap::new();
    let mut traces = BTreeMap::new();
    for target in all_targets(cfg) {
        let (p, t) = train_target(cfg, &simulated, &models, &ft, target)?;
        policies.insert(target.name(), p);
        if let Some(t) = t {
            traces.insert(target.name(), t);
        }
    }
    let evaluation = evaluate(cfg, &simulated, &models, &policies)?;
    Ok(PipelineOutputs { simulated, models, policies, traces, evaluation })
}

// ── Files and manifest ──

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub command: String,
    pub seeds: BTreeMap<String, u64>,
    pub config_hash: String,
    pub sha256: String,
    /// Empirical text frequencies of a dataset, keyed by text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_frequencies: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    fn save(&self, out_dir: &Path) -> Result<()> {
        std::fs::write(out_dir.join(MANIFEST), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Resolved configuration plus output location.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub out_dir: PathBuf,
    /// Print per-step timings to stderr.
    pub verbose: bool,
}

impl Context {
    pub fn new(mut config: ExperimentConfig, out_dir: impl Into<PathBuf>, seed_override: Option<u64>) -> Self {
        if let Some(s) = seed_override {
            config.seed = s;
        }
        let config_hash = config.hash();
        Self { config, config_hash, out_dir: out_dir.into(), verbose: false }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    fn write(&self, manifest: &mut Manifest, rel: &str, command: &str, seeds: &[(&str, u64)], body: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, body)?;
        manifest.entries.insert(
            rel.to_string(),
            ManifestEntry {
                command: command.to_string(),
                seeds: seeds.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                config_hash: self.config_hash.clone(),
                sha256: hex::encode(Sha256::digest(body)),
                text_frequencies: None,
            },
        );
        Ok(())
    }

    fn require(&self, rel: &str, hint: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact { path, hint: hint.to_string() })
        }
    }

    fn master(&self) -> (&'static str, u64) {
        ("master", self.config.seed)
    }
}

pub const D_R: &str = "data/randomized.jsonl";
pub const D_O: &str = "data/confounded.jsonl";
pub const POPULATION: &str = "data/population.json";
pub const ASSIGNMENT: &str = "data/assignment.json";
pub const GHAT_RANDOMIZED: &str = "models/outcome_randomized.json";
pub const GHAT_CONFOUNDED: &str = "models/outcome_confounded.json";

pub fn policy_path(target: &str) -> String {
    format!("policies/{target}.json")
}

pub fn trace_path(target: &str) -> String {
    format!("traces/{target}.csv")
}

fn text_frequencies(ds: &LabeledDataset) -> Result<Option<BTreeMap<String, f64>>> {
    let vocab = ds.vocab();
    if !vocab.is_enumerable() || vocab.enumerable_size()? > 4096 {
        return Ok(None);
    }
    let n = ds.len() as f64;
    let counts = ds.text_counts()?;
    Ok(Some(counts.iter().enumerate().map(|(i, c)| (vocab.text_at(i).to_string(), *c as f64 / n)).collect()))
}

fn jsonl_bytes(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf)?;
    Ok(buf)
}

pub fn cmd_simulate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let sim = simulate(cfg)?;
    let mut manifest = Manifest::load(&ctx.out_dir)?;
    let seeds = [ctx.master(), ("simulate", seeds::derive(cfg.seed, seeds::SIMULATE))];
    ctx.write(&mut manifest, D_R, "simulate", &seeds, &jsonl_bytes(&sim.randomized)?)?;
    if let Some(e) = manifest.entries.get_mut(D_R) {
        e.text_frequencies = text_frequencies(&sim.randomized)?;
    }
    let pop = serde_json::to_string_pretty(&sim.population)? + "\n";
    ctx.write(&mut manifest, POPULATION, "simulate", &[ctx.master(), ("population", seeds::derive(cfg.seed, seeds::POPULATION))], pop.as_bytes())?;
    let assignment = sim.assignment.to_json()?;
    ctx.write(&mut manifest, ASSIGNMENT, "simulate", &[ctx.master(), ("assignment", seeds::derive(cfg.seed, seeds::ASSIGNMENT))], assignment.as_bytes())?;
    let mut written = vec![ctx.path(D_R), ctx.path(POPULATION), ctx.path(ASSIGNMENT)];
    if let Some(d_o) = &sim.observational {
        let seeds = [ctx.master(), ("simulate", seeds::derive(cfg.seed, seeds::SIMULATE)), ("confound", seeds::derive(cfg.seed, seeds::CONFOUND))];
        ctx.write(&mut manifest, D_O, "simulate", &seeds, &jsonl_bytes(d_o)?)?;
        written.push(ctx.path(D_O));
    }
    manifest.save(&ctx.out_dir)?;
    Ok(written)
}

const SIMULATE_HINT: &str = "run the `simulate` subcommand with the same config and --out-dir first";
const FIT_HINT: &str = "run the `fit-outcome` subcommand with the same config and --out-dir first";
const TRAIN_HINT: &str = "run the `train` subcommand for this method with the same config and --out-dir first";

fn load_simulated(ctx: &Context) -> Result<Simulated> {
    let randomized = LabeledDataset::load(ctx.require(D_R, SIMULATE_HINT)?)?;
    let population: Population =
        serde_json::from_str(&std::fs::read_to_string(ctx.require(POPULATION, SIMULATE_HINT)?)?)?;
    let assignment = Policy::load(ctx.require(ASSIGNMENT, SIMULATE_HINT)?)?;
    let d_o = ctx.path(D_O);
    let observational = if d_o.exists() { Some(LabeledDataset::load(d_o)?) } else { None };
    Ok(Simulated { population, assignment, randomized, observational })
}

fn load_models(ctx: &Context) -> Result<OutcomeModels> {
    let randomized = OutcomeModel::load(ctx.require(GHAT_RANDOMIZED, FIT_HINT)?)?;
    let c = ctx.path(GHAT_CONFOUNDED);
    let confounded = if c.exists() { Some(OutcomeModel::load(c)?) } else { None };
    Ok(OutcomeModels { randomized, confounded })
}

pub fn cmd_fit_outcome(ctx: &Context) -> Result<Vec<PathBuf>> {
    let sim = load_simulated(ctx)?;
    let models = fit_outcome_models(&ctx.config, &sim)?;
    let mut manifest = Manifest::load(&ctx.out_dir)?;
    let seeds = [ctx.master()];
    let mut written = Vec::new();
    for (rel, model) in [(GHAT_RANDOMIZED, Some(&models.randomized)), (GHAT_CONFOUNDED, models.confounded.as_ref())] {
        if let Some(m) = model {
            let tmp = ctx.path(rel);
            if let Some(parent) = tmp.parent() {
                std::fs::create_dir_all(parent)?;
            }
            m.save(&tmp)?;
            let bytes = std::fs::read(&tmp)?;
            ctx.write(&mut manifest, rel, "fit-outcome", &seeds, &bytes)?;
            written.push(tmp);
        }
    }
    manifest.save(&ctx.out_dir)?;
    Ok(written)
}

pub fn cmd_train(ctx: &Context, target: TrainTarget) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let sim = load_simulated(ctx)?;
    let models = if target.method.objective().is_some_and(|o| o != Objective::Cpo) {
        load_models(ctx)?
    } else {
        // CPO and FT never read an outcome model.
        OutcomeModels { randomized: OutcomeModel::zero(*sim.randomized.vocab(), cfg.outcome_model.feature_order), confounded: None }
    };
    let ft = fine_tuned(cfg, &sim)?;
    let (policy, trace) = train_target(cfg, &sim, &models, &ft, target)?;
    let name = target.name();
    let mut manifest = Manifest::load(&ctx.out_dir)?;
    let seeds = [ctx.master(), ("train", target.seed(cfg.seed))];
    let command = format!("train --method {name}");
    ctx.write(&mut manifest, &policy_path(&name), &command, &seeds, policy.to_json()?.as_bytes())?;
    let mut written = vec![ctx.path(&policy_path(&name))];
    if let Some(t) = trace {
        ctx.write(&mut manifest, &trace_path(&name), &command, &seeds, t.to_csv().as_bytes())?;
        written.push(ctx.path(&trace_path(&name)));
    }
    manifest.save(&ctx.out_dir)?;
    Ok(written)
}

pub const WIN_RATES_CSV: &str = "results/win_rates.csv";
pub const REWARD_TABLE_CSV: &str = "results/reward_table.csv";
pub const IMPACT_CSV: &str = "results/confounding_impact.csv";

pub fn cmd_evaluate(ctx: &Context) -> Result<Evaluation> {
    let cfg = &ctx.config;
    let sim = load_simulated(ctx)?;
    let models = load_models(ctx)?;
    let mut policies = BTreeMap::new();
    for m in configured_methods(cfg) {
        policies.insert(m.name().to_string(), Policy::load(ctx.require(&policy_path(m.name()), TRAIN_HINT)?)?);
    }
    for target in all_targets(cfg) {
        let p = ctx.path(&policy_path(&target.name()));
        if target.variant != Variant::Clean && p.exists() {
            policies.insert(target.name(), Policy::load(p)?);
        }
    }
    let eval = evaluate(cfg, &sim, &models, &policies)?;

    let mut manifest = Manifest::load(&ctx.out_dir)?;
    let win_seeds: Vec<(String, u64)> = eval
        .win_rates
        .iter()
        .map(|c| {
            let (a, b) = (Method::parse(&c.a).unwrap(), Method::parse(&c.b).unwrap());
            (format!("{}/{}", c.a, c.b), seeds::win_rate(cfg.seed, a.index(), b.index()))
        })
        .collect();
    let win_seeds: Vec<(&str, u64)> = std::iter::once(ctx.master()).chain(win_seeds.iter().map(|(k, v)| (k.as_str(), *v))).collect();
    ctx.write(&mut manifest, WIN_RATES_CSV, "evaluate", &win_seeds, eval.win_rates_csv().as_bytes())?;
    ctx.write(&mut manifest, "results/win_rates.txt", "evaluate", &win_seeds, eval.win_rates_text().as_bytes())?;
    let table_seeds = [ctx.master(), ("reward_table", seeds::derive(cfg.seed, seeds::REWARD_TABLE))];
    ctx.write(&mut manifest, REWARD_TABLE_CSV, "evaluate", &table_seeds, eval.reward_table.to_csv().as_bytes())?;
    ctx.write(&mut manifest, "results/reward_table.txt", "evaluate", &table_seeds, eval.reward_table.to_text().as_bytes())?;
    let impact_seeds: Vec<(String, u64)> = eval
        .impacts
        .iter()
        .map(|i| (i.method.clone(), seeds::impact(cfg.seed, Method::parse(&i.method).unwrap().index())))
        .collect();
    let impact_seeds: Vec<(&str, u64)> =
        std::iter::once(ctx.master()).chain(impact_seeds.iter().map(|(k, v)| (k.as_str(), *v))).collect();
    ctx.write(&mut manifest, IMPACT_CSV, "evaluate", &impact_seeds, impacts_csv(&eval.impacts).as_bytes())?;
    ctx.write(&mut manifest, "results/confounding_impact_plot.csv", "evaluate", &impact_seeds, eval.impact_plot_data().as_bytes())?;
    manifest.save(&ctx.out_dir)?;
    Ok(eval)
}

// ── Reproduce all ──

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub master_seed: u64,
    pub steps: Vec<StepOutcome>,
    pub criteria: Vec<CriterionResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.steps.iter().all(|s| s.error.is_none()) && self.criteria.iter().all(|c| c.passed)
    }

    pub fn pass_vector(&self) -> Vec<bool> {
        self.criteria.iter().map(|c| c.passed).collect()
    }

    pub fn to_markdown(&self, evaluation: Option<&Evaluation>) -> String {
        let mut out = String::from("# Reproduction report\n\n");
        let _ = writeln!(out, "- master seed: {}", self.master_seed);
        let _ = writeln!(out, "- config hash: `{}`\n", self.config_hash);
        out.push_str("## Steps\n\n| step | status |\n|---|---|\n");
        for s in &self.steps {
            let status = s.error.as_deref().map_or("ok".to_string(), |e| format!("FAILED: {}", e.replace('|', "/")));
            let _ = writeln!(out, "| {} | {} |", s.step, status);
        }
        out.push_str("\n## Acceptance criteria\n\n| # | criterion | result | measured |\n|---|---|---|---|\n");
        for c in &self.criteria {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "| {} | {} | {} | {} |", c.id, c.title, verdict, c.summary.replace('|', "/"));
        }
        if let Some(e) = evaluation {
            out.push_str("\n## Reward table\n\n```\n");
            out.push_str(&e.reward_table.to_text());
            out.push_str("```\n\n## Win rates\n\n```\n");
            out.push_str(&e.win_rates_text());
            out.push_str("```\n\n## Confounding impact\n\n| method | impact | 95% CI |\n|---|---|---|\n");
            for i in &e.impacts {
                let _ = writeln!(out, "| {} | {:.4} | [{:.4}, {:.4}] |", i.method, i.impact, i.ci_low, i.ci_high);
            }
        }
        out
    }
}

fn timed<T>(verbose: bool, label: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    if verbose {
        eprintln!("{label}: {:.1}s", start.elapsed().as_secs_f64());
    }
    out
}

/// Runs every stage and every acceptance criterion, writing `report.md`.
/// A failing stage is recorded and independent later work still runs.
pub fn cmd_reproduce_all(ctx: &Context) -> Result<Report> {
    std::fs::create_dir_all(&ctx.out_dir)?;
    let cfg = &ctx.config;
    let v = ctx.verbose;
    let mut steps = Vec::new();
    let mut record = |step: String, r: Result<()>| {
        steps.push(StepOutcome { step, error: r.err().map(|e| e.to_string()) });
    };

    record("simulate".into(), timed(v, "simulate", || cmd_simulate(ctx).map(drop)));
    record("fit-outcome".into(), timed(v, "fit-outcome", || cmd_fit_outcome(ctx).map(drop)));
    for target in all_targets(cfg) {
        let name = target.name();
        record(format!("train {name}"), timed(v, &format!("train {name}"), || cmd_train(ctx, target).map(drop)));
    }
    let evaluation = timed(v, "evaluate", || cmd_evaluate(ctx));
    let eval_ref = evaluation.as_ref().ok();
    record("evaluate".into(), evaluation.as_ref().map(drop).map_err(clone_error));

    let mut criteria = Vec::new();
    let (bias_variance, mut bv_criteria) = timed(v, "bias/variance suite", || Ok(acceptance::bias_variance_criteria(&cfg.acceptance, cfg.seed)))?;
    criteria.append(&mut bv_criteria);
    let mut manifest = Manifest::load(&ctx.out_dir)?;
    let bv_seed = [ctx.master(), ("acceptance", seeds::acceptance(cfg.seed, 0))];
    let bv_csv = crate::evaluation::reports_csv(&bias_variance);
    record(
        "bias/variance suite".into(),
        ctx.write(&mut manifest, "results/bias_variance.csv", "reproduce-all", &bv_seed, bv_csv.as_bytes()),
    );
    manifest.save(&ctx.out_dir)?;

    criteria.push(match eval_ref {
        Some(e) => acceptance::criterion_5(e),
        None => CriterionResult::failed(5, acceptance::TITLES[4], "evaluation unavailable"),
    });
    criteria.push(match eval_ref {
        Some(e) => acceptance::criterion_6(e),
        None => CriterionResult::failed(6, acceptance::TITLES[5], "evaluation unavailable"),
    });
    criteria.push(timed(v, "criterion 7", || Ok(acceptance::criterion_7(cfg.acceptance.gradient_instances, cfg.seed)))?);
    criteria.push(acceptance::criterion_8(cfg.seed));
    if cfg.acceptance.determinism_check {
        let scratch = ctx.out_dir.join("determinism-scratch");
        criteria.push(timed(v, "criterion 9", || Ok(acceptance::criterion_9(cfg, &scratch)))?);
    }
    criteria.sort_by_key(|c| c.id);

    let report = Report { config_hash: ctx.config_hash.clone(), master_seed: cfg.seed, steps, criteria };
    let mut manifest = Manifest::load(&ctx.out_dir)?;
    ctx.write(&mut manifest, "report.md", "reproduce-all", &[ctx.master()], report.to_markdown(eval_ref).as_bytes())?;
    manifest.save(&ctx.out_dir)?;
    Ok(report)
}

fn clone_error(e: &Error) -> Error {
    Error::InvalidArgument(e.to_string())
}

/// Runs simulate, fit-outcome, train and evaluate into `out_dir`.
pub fn run_stages(ctx: &Context) -> Result<Evaluation> {
    cmd_simulate(ctx)?;
    cmd_fit_outcome(ctx)?;
    for target in all_targets(&ctx.config) {
        cmd_train(ctx, target)?;
    }
    cmd_evaluate(ctx)
}

/// Every regular file under `dir`, keyed by relative path.
pub fn read_tree(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let path = e.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&path)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_names_roundtrip() {
        for s in ["ft", "cpo", "cpo+reseed", "dr-cpo+confounded", "oo-rlhf"] {
            assert_eq!(TrainTarget::parse(s).unwrap().name(), s);
        }
        assert!(TrainTarget::parse("ft+reseed").is_err());
        assert!(TrainTarget::parse("ppo").is_err());
        assert_eq!(TrainTarget::parse("DR_CPO").unwrap().method, Method::DrCpo);
    }

    #[test]
    fn train_seeds_are_distinct() {
        let mut seen = std::collections::BTreeSet::new();
        for m in Method::ALL {
            for v in [Variant::Clean, Variant::Confounded, Variant::Reseeded] {
                assert!(seen.insert(TrainTarget { method: m, variant: v }.seed(5)));
            }
        }
    }
}
