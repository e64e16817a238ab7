//! TOML experiment configuration.
//!
//! Parse errors and validation errors both carry the 1-based line of the
//! offending key.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::WeightOptions;
use crate::optimizer::{Objective, TrainConfig, UpdateRule};
use crate::policy::Policy;
use crate::seeds;
use crate::simulator::{ConfounderSpec, Population};
use crate::textspace::{FeatureOrder, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub vocab: VocabSpec,
    pub population: PopulationSpec,
    #[serde(default)]
    pub assignment: AssignmentSpec,
    pub data: DataSpec,
    #[serde(default)]
    pub outcome_model: OutcomeModelSpec,
    #[serde(default)]
    pub ft: FtSpec,
    #[serde(default)]
    pub train: TrainSpecs,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub acceptance: AcceptanceSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSpec {
    pub size: usize,
    pub seq_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub noise_sd: f64,
    /// Explicit `g` weights in feature order: intercept, unigrams, bigrams.
    #[serde(default)]
    pub g_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub random: Option<RandomWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomWeights {
    pub intercept: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AssignmentSpec {
    #[default]
    Uniform,
    Random {
        order: usize,
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub n: usize,
    #[serde(default)]
    pub confounder: Option<ConfounderSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeSource {
    #[default]
    Randomized,
    Confounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModelSpec {
    #[serde(default = "default_feature_order")]
    pub feature_order: FeatureOrder,
    #[serde(default = "default_lambda")]
    pub ridge_lambda: f64,
    #[serde(default)]
    pub source: OutcomeSource,
}

fn default_feature_order() -> FeatureOrder {
    FeatureOrder::Bigram
}

fn default_lambda() -> f64 {
    crate::outcome_model::DEFAULT_RIDGE_LAMBDA
}

impl Default for OutcomeModelSpec {
    fn default() -> Self {
        Self { feature_order: default_feature_order(), ridge_lambda: default_lambda(), source: OutcomeSource::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FtSpec {
    pub order: usize,
    pub smoothing: f64,
}

impl Default for FtSpec {
    fn default() -> Self {
        Self { order: 1, smoothing: 1.0 }
    }
}

/// Trainer hyperparameters; the objective and seed come from context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub m_per_step: usize,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub update_rule: UpdateRule,
    pub self_normalize: bool,
    pub clip_max: Option<f64>,
    pub kl_weight: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let d = TrainConfig::new(Objective::Cpo);
        Self {
            steps: d.steps,
            batch: d.batch,
            learning_rate: d.learning_rate,
            m_per_step: d.m_per_step,
            adam_betas: d.adam_betas,
            adam_eps: d.adam_eps,
            update_rule: d.update_rule,
            self_normalize: d.weight_opts.self_normalize,
            clip_max: d.weight_opts.clip_max,
            kl_weight: d.kl_weight,
        }
    }
}

impl TrainSpec {
    pub fn to_train_config(&self, objective: Objective, seed: u64) -> TrainConfig {
        TrainConfig {
            objective,
            steps: self.steps,
            batch: self.batch,
            learning_rate: self.learning_rate,
            adam_betas: self.adam_betas,
            adam_eps: self.adam_eps,
            update_rule: self.update_rule,
            weight_opts: WeightOptions { self_normalize: self.self_normalize, clip_max: self.clip_max },
            m_per_step: self.m_per_step,
            kl_weight: self.kl_weight,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpecs {
    pub cpo: TrainSpec,
    pub dr_cpo: TrainSpec,
    pub oo_rlhf: TrainSpec,
}

impl TrainSpecs {
    pub fn for_objective(&self, objective: Objective) -> &TrainSpec {
        match objective {
            Objective::Cpo => &self.cpo,
            Objective::DrCpo => &self.dr_cpo,
            Objective::OoRlhf => &self.oo_rlhf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSpec {
    pub methods: Vec<String>,
    pub pairs: usize,
    /// Reference draws for the reward table.
    pub m: usize,
    pub self_normalize: bool,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            methods: ["ft", "cpo", "dr-cpo", "oo-rlhf"].iter().map(|s| s.to_string()).collect(),
            pairs: 2000,
            m: 100_000,
            self_normalize: true,
        }
    }
}

/// Sizes of the Monte Carlo acceptance checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcceptanceSpec {
    pub replicates: usize,
    pub triples: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub n: usize,
    pub noise_sd: f64,
    pub m: usize,
    /// Disjoint sample size used to fit outcome models.
    pub aux_samples: usize,
    /// Assignment draws behind the deliberately poor `P^R` estimate.
    pub propensity_samples: usize,
    pub variance_n: usize,
    pub variance_m_factor: usize,
    pub gradient_instances: usize,
    /// Whether `reproduce-all` reruns a reduced pipeline to check
    /// byte-identical outputs.
    pub determinism_check: bool,
}

impl Default for AcceptanceSpec {
    fn default() -> Self {
        Self {
            replicates: 1000,
            triples: 5,
            vocab_size: 3,
            seq_len: 4,
            n: 2000,
            noise_sd: 1.0,
            m: 2000,
            aux_samples: 2000,
            propensity_samples: 50,
            variance_n: 200,
            variance_m_factor: 100,
            gradient_instances: 100,
            determinism_check: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of_offset(text, s.start));
            Error::Config { line, message: e.message().trim().to_string() }
        })?;
        cfg.validate(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn vocab(&self) -> Vocab {
        Vocab { size: self.vocab.size, seq_len: self.vocab.seq_len }
    }

    pub fn population(&self) -> Result<Population> {
        let vocab = self.vocab();
        match (&self.population.g_weights, &self.population.random) {
            (Some(w), None) => Population::new(vocab, w.clone(), self.population.noise_sd),
            (None, Some(r)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(self.seed, seeds::POPULATION));
                Population::random(vocab, r.intercept, r.scale, self.population.noise_sd, &mut rng)
            }
            _ => Err(Error::InvalidArgument("population needs exactly one of g_weights and random".into())),
        }
    }

    pub fn assignment(&self) -> Result<Policy> {
        match self.assignment {
            AssignmentSpec::Uniform => Policy::uniform(self.vocab(), 0),
            AssignmentSpec::Random { order, scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(self.seed, seeds::ASSIGNMENT));
                Policy::random(self.vocab(), order, scale, &mut rng)
            }
        }
    }

    pub fn train_config(&self, objective: Objective, seed: u64) -> TrainConfig {
        self.train.for_objective(objective).to_train_config(objective, seed)
    }

    fn validate(&self, text: &str) -> Result<()> {
        let fail = |path: &[&str], message: String| Err(Error::Config { line: locate(text, path), message });
        if let Err(e) = self.vocab().validate() {
            return fail(&["vocab", "size"], e.to_string());
        }
        if let Err(e) = self.population() {
            let p = &self.population;
            let key = match (&p.g_weights, &p.random) {
                (Some(_), None) => "g_weights",
                (None, Some(_)) => "random",
                _ => return fail(&["population"], e.to_string()),
            };
            let key = if p.noise_sd.is_finite() && p.noise_sd >= 0.0 { key } else { "noise_sd" };
            return fail(&["population", key], e.to_string());
        }
        if let Err(e) = self.assignment() {
            return fail(&["assignment"], e.to_string());
        }
        if self.data.n == 0 {
            return fail(&["data", "n"], "n must be at least 1".into());
        }
        if self.outcome_model.source == OutcomeSource::Confounded && self.data.confounder.is_none() {
            return fail(&["outcome_model", "source"], "confounded source needs data.confounder".into());
        }
        if !(self.outcome_model.ridge_lambda >= 0.0) {
            return fail(&["outcome_model", "ridge_lambda"], "ridge_lambda must be >= 0".into());
        }
        if self.ft.order > crate::policy::MAX_ORDER || !(self.ft.smoothing >= 0.0) {
            return fail(&["ft"], "ft needs order <= 2 and smoothing >= 0".into());
        }
        for (key, obj) in [("cpo", Objective::Cpo), ("dr_cpo", Objective::DrCpo), ("oo_rlhf", Objective::OoRlhf)] {
            if let Err(e) = self.train_config(obj, 0).validate() {
                return match train_field(self.train.for_objective(obj), obj) {
                    Some(field) => fail(&["train", key, field], e.to_string()),
                    None => fail(&["train", key], e.to_string()),
                };
            }
        }
        for m in &self.evaluation.methods {
            if crate::runner::Method::parse(m).is_none() {
                return fail(&["evaluation", "methods"], format!("unknown method {m:?}"));
            }
        }
        if self.evaluation.pairs == 0 || self.evaluation.m == 0 {
            return fail(&["evaluation"], "pairs and m must be at least 1".into());
        }
        let a = &self.acceptance;
        if a.replicates < 2 || a.triples == 0 || a.n == 0 || a.variance_n == 0 || a.m == 0 {
            return fail(&["acceptance"], "acceptance sizes must be positive and replicates >= 2".into());
        }
        Ok(())
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Best-effort line of `path`: the table header for a one-element path,
/// else the key within its table (falling back to the header).
/// The key most likely behind a rejected train section, for error locations.
fn train_field(spec: &TrainSpec, objective: Objective) -> Option<&'static str> {
    let (b1, b2) = spec.adam_betas;
    if spec.steps == 0 {
        Some("steps")
    } else if !(spec.learning_rate >= 0.0 && spec.learning_rate.is_finite()) {
        Some("learning_rate")
    } else if objective.uses_outcome_model() && spec.m_per_step == 0 {
        Some("m_per_step")
    } else if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
        Some("adam_betas")
    } else if !(spec.adam_eps > 0.0) {
        Some("adam_eps")
    } else if !(spec.kl_weight >= 0.0) {
        Some("kl_weight")
    } else if spec.clip_max.is_some() {
        Some("clip_max")
    } else {
        None
    }
}

fn locate(text: &str, path: &[&str]) -> usize {
    let (table, key) = match path {
        [] => return 0,
        [t] => (t.to_string(), None),
        [t @ .., k] => (t.join("."), Some(*k)),
    };
    let table = table.as_str();
    let mut in_table = false;
    let mut header_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line.trim_matches(|c| c == '[' || c == ']').trim();
            in_table = name == table || name.starts_with(&format!("{table}."));
            if in_table && header_line == 0 {
                header_line = i + 1;
                if key.is_none() {
                    return header_line;
                }
            }
            continue;
        }
        let lhs = line.split('=').next().unwrap_or("").trim();
        if in_table && Some(lhs) == key {
            return i + 1;
        }
        if !in_table && header_line == 0 && key.is_none() && lhs == table {
            return i + 1;
        }
    }
    header_line
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[vocab]
size = 2
seq_len = 1

[population]
noise_sd = 0.0
g_weights = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]

[data]
n = 500
confounder = { kind = "negation" }
"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.vocab(), Vocab::new(2, 1).unwrap());
        assert_eq!(cfg.data.confounder, Some(ConfounderSpec::Negation));
        assert_eq!(cfg.train.cpo, TrainSpec::default());
        assert_eq!(cfg.evaluation.methods.len(), 4);
        assert_eq!(cfg.population().unwrap().g(&crate::textspace::Text::new(vec![1], &cfg.vocab()).unwrap()), 1.0);
        assert_eq!(cfg.hash(), ExperimentConfig::from_toml(MINIMAL).unwrap().hash());
    }

    #[test]
    fn syntax_error_reports_line() {
        let bad = MINIMAL.replace("n = 500", "n = = 500");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 13),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_error_reports_line() {
        let bad = MINIMAL.replace("n = 500", "n = 0");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 13);
                assert!(message.contains("n must be"));
            }
            other => panic!("{other:?}"),
        }
        let bad = format!("{MINIMAL}\n[train.cpo]\nsteps = 0\n");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 17),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]", "[1.0]");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let bad = MINIMAL.replace("noise_sd = 0.0", "noise_sd = 0.0\nsigma = 1.0");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config { .. })));
    }
}
