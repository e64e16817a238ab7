//! Ground-truth populations, randomized experiments and confounded
//! observational datasets.
//!
//! A [`Population`] fixes the mean potential outcome `g(x)` as a linear
//! function of the order-2 text features, plus homoscedastic Gaussian
//! individual noise. [`run_experiment`] draws texts from a known assignment
//! policy and records one potential outcome per text; [`confound`] turns a
//! randomized dataset into an observational one.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::textspace::{enumerate_texts, linear_score, reference_columns, FeatureOrder, Text, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub vocab: Vocab,
    /// Order-2 feature weights; `g(x) = <g_weights, featurize(x)>`.
    pub g_weights: Vec<f64>,
    pub noise_sd: f64,
}

impl Population {
    pub fn new(vocab: Vocab, g_weights: Vec<f64>, noise_sd: f64) -> Result<Self> {
        vocab.validate()?;
        let dim = vocab.feature_dim(FeatureOrder::Bigram);
        if g_weights.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "expected {dim} outcome weights, got {}",
                g_weights.len()
            )));
        }
        if g_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("outcome weights must be finite".into()));
        }
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise sd must be >= 0, got {noise_sd}")));
        }
        Ok(Self { vocab, g_weights, noise_sd })
    }

    /// `g(x) = c` for every text.
    pub fn constant(vocab: Vocab, c: f64, noise_sd: f64) -> Result<Self> {
        let mut w = vec![0.0; vocab.feature_dim(FeatureOrder::Bigram)];
        w[0] = c;
        Self::new(vocab, w, noise_sd)
    }

    /// Weights drawn from `Normal(0, scale^2)` around a fixed intercept, with
    /// the reference-level columns held at zero so the weights are
    /// identifiable from data.
    pub fn random<R: Rng + ?Sized>(vocab: Vocab, intercept: f64, scale: f64, noise_sd: f64, rng: &mut R) -> Result<Self> {
        let dim = vocab.feature_dim(FeatureOrder::Bigram);
        let mut w: Vec<f64> = (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        w[0] = intercept;
        for c in reference_columns(&vocab, FeatureOrder::Bigram) {
            w[c] = 0.0;
        }
        Self::new(vocab, w, noise_sd)
    }

    /// Mean potential outcome of `text`.
    pub fn g(&self, text: &Text) -> f64 {
        linear_score(&self.g_weights, text, &self.vocab, FeatureOrder::Bigram)
    }

    /// One individual's response: `g(text) + noise`.
    pub fn potential_outcome<R: Rng + ?Sized>(&self, text: &Text, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        if self.noise_sd == 0.0 {
            self.g(text)
        } else {
            self.g(text) + self.noise_sd * z
        }
    }

    /// `g` over every text in enumeration order.
    pub fn g_enumerated(&self) -> Result<Vec<f64>> {
        Ok(enumerate_texts(&self.vocab)?.iter().map(|x| self.g(x)).collect())
    }

    /// The best achievable value and one text attaining it.
    pub fn maximizer(&self) -> Result<(Text, f64)> {
        let texts = enumerate_texts(&self.vocab)?;
        let (i, best) = texts
            .iter()
            .map(|x| self.g(x))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, g)| if g > acc.1 { (i, g) } else { acc });
        Ok((texts[i].clone(), best))
    }

    /// The worst text under `g`.
    pub fn minimizer(&self) -> Result<(Text, f64)> {
        let texts = enumerate_texts(&self.vocab)?;
        let (i, worst) = texts
            .iter()
            .map(|x| self.g(x))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, g)| if g < acc.1 { (i, g) } else { acc });
        Ok((texts[i].clone(), worst))
    }
}

/// Exact `V(f) = sum_x P^f(x) g(x)` by enumeration.
pub fn true_value(policy: &Policy, pop: &Population) -> Result<f64> {
    check_same_vocab(policy.vocab(), &pop.vocab)?;
    value_of_distribution(&policy.distribution()?, pop)
}

/// Value of an explicit distribution over the enumeration.
pub fn value_of_distribution(probs: &[f64], pop: &Population) -> Result<f64> {
    let g = pop.g_enumerated()?;
    if g.len() != probs.len() {
        return Err(Error::InvalidArgument(format!(
            "distribution has {} entries, text space has {}",
            probs.len(),
            g.len()
        )));
    }
    Ok(probs.iter().zip(&g).map(|(p, g)| p * g).sum())
}

pub(crate) fn check_same_vocab(a: &Vocab, b: &Vocab) -> Result<()> {
    if a != b {
        return Err(Error::VocabMismatch(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub text: Text,
    pub outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Texts drawn from a known assignment policy.
    Randomized { assignment: String },
    /// Outcomes or text selection altered by a confounder.
    Observational { confounder: String },
}

impl Provenance {
    pub fn is_randomized(&self) -> bool {
        matches!(self, Provenance::Randomized { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConfounderSpec {
    /// Every outcome is negated.
    Negation,
    /// A latent reader trait `u ~ N(0, 1)` shifts the outcome by
    /// `strength * u` and tilts which texts get read by
    /// `exp(selection_bias * u * z(text))`.
    LatentShift { strength: f64, selection_bias: f64 },
}

impl ConfounderSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ConfounderSpec::Negation => "negation",
            ConfounderSpec::LatentShift { .. } => "latent-shift",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    vocab: Vocab,
    samples: Vec<Sample>,
    provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(vocab: Vocab, samples: Vec<Sample>, provenance: Provenance) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for s in &samples {
            s.text.validate(&vocab)?;
        }
        Ok(Self { vocab, samples, provenance })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn texts(&self) -> Vec<Text> {
        self.samples.iter().map(|s| s.text.clone()).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.outcome).collect()
    }

    /// Splits into `[0, at)` and `[at, n)`; both halves keep the provenance.
    pub fn split_at(&self, at: usize) -> Result<(Self, Self)> {
        if at == 0 || at >= self.samples.len() {
            return Err(Error::InvalidArgument(format!(
                "split point {at} must lie strictly inside 1..{}",
                self.samples.len()
            )));
        }
        let (a, b) = self.samples.split_at(at);
        Ok((
            Self { vocab: self.vocab, samples: a.to_vec(), provenance: self.provenance.clone() },
            Self { vocab: self.vocab, samples: b.to_vec(), provenance: self.provenance.clone() },
        ))
    }

    /// Rows drawn uniformly with replacement.
    pub fn resample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Self {
        let n = self.samples.len();
        let samples = (0..size).map(|_| self.samples[rng.random_range(0..n)].clone()).collect();
        Self { vocab: self.vocab, samples, provenance: self.provenance.clone() }
    }

    /// Count of each text in enumeration order.
    pub fn text_counts(&self) -> Result<Vec<usize>> {
        let mut counts = vec![0usize; self.vocab.enumerable_size()?];
        for s in &self.samples {
            counts[self.vocab.index_of(&s.text)] += 1;
        }
        Ok(counts)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = DatasetHeader {
            format: DATASET_FORMAT.to_string(),
            vocab: self.vocab,
            provenance: self.provenance.clone(),
            n: self.samples.len(),
        };
        serde_json::to_writer(&mut w, &HeaderLine { header })?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut w, &Record { tokens: s.text.tokens(), outcome: s.outcome })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or(Error::Parse { line: 1, message: "missing header line".into() })??;
        let HeaderLine { header } = serde_json::from_str(&first)
            .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
        if header.format != DATASET_FORMAT {
            return Err(Error::Parse { line: 1, message: format!("unknown dataset format {:?}", header.format) });
        }
        let mut samples = Vec::with_capacity(header.n);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 2;
            let rec: OwnedRecord =
                serde_json::from_str(&line).map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
            let text = Text::new(rec.tokens, &header.vocab)
                .map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
            samples.push(Sample { text, outcome: rec.outcome });
        }
        if samples.len() != header.n {
            return Err(Error::Parse {
                line: samples.len() + 1,
                message: format!("header declares {} records, found {}", header.n, samples.len()),
            });
        }
        Self::new(header.vocab, samples, header.provenance)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(BufReader::new(std::fs::File::open(path)?))
    }
}

const DATASET_FORMAT: &str = "cpo-dataset/1";

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    vocab: Vocab,
    provenance: Provenance,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: DatasetHeader,
}

#[derive(Serialize)]
struct Record<'a> {
    tokens: &'a [u32],
    outcome: f64,
}

#[derive(Deserialize)]
struct OwnedRecord {
    tokens: Vec<u32>,
    outcome: f64,
}

/// `n` i.i.d. rows: a text from `assignment`, then one potential outcome.
pub fn run_experiment<R: Rng + ?Sized>(
    pop: &Population,
    assignment: &Policy,
    assignment_id: &str,
    n: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    check_same_vocab(assignment.vocab(), &pop.vocab)?;
    if n == 0 {
        return Err(Error::InvalidArgument("experiment size must be at least 1".into()));
    }
    let samples = (0..n)
        .map(|_| {
            let text = assignment.sample(rng);
            let outcome = pop.potential_outcome(&text, rng);
            Sample { text, outcome }
        })
        .collect();
    Ok(LabeledDataset {
        vocab: pop.vocab,
        samples,
        provenance: Provenance::Randomized { assignment: assignment_id.to_string() },
    })
}

/// Injects a confounder into a randomized dataset.
pub fn confound<R: Rng + ?Sized>(
    ds: &LabeledDataset,
    spec: &ConfounderSpec,
    pop: &Population,
    rng: &mut R,
) -> Result<LabeledDataset> {
    if !ds.provenance.is_randomized() {
        return Err(Error::AlreadyObservational);
    }
    let provenance = Provenance::Observational { confounder: spec.label().to_string() };
    let samples = match *spec {
        ConfounderSpec::Negation => negate(&ds.samples),
        ConfounderSpec::LatentShift { strength, selection_bias } => {
            if !strength.is_finite() || !selection_bias.is_finite() {
                return Err(Error::InvalidArgument("confounder parameters must be finite".into()));
            }
            latent_shift(ds, pop, strength, selection_bias, rng)?
        }
    };
    Ok(LabeledDataset { vocab: ds.vocab, samples, provenance })
}

fn negate(samples: &[Sample]) -> Vec<Sample> {
    samples.iter().map(|s| Sample { text: s.text.clone(), outcome: -s.outcome }).collect()
}

fn latent_shift<R: Rng + ?Sized>(
    ds: &LabeledDataset,
    pop: &Population,
    strength: f64,
    selection_bias: f64,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    let n = ds.samples.len();
    let g: Vec<f64> = ds.samples.iter().map(|s| pop.g(&s.text)).collect();
    let mean = g.iter().sum::<f64>() / n as f64;
    let sd = (g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let z: Vec<f64> = g.iter().map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 }).collect();
    let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();

    let log_accept: Vec<f64> = u.iter().zip(&z).map(|(u, z)| selection_bias * u * z).collect();
    let max = log_accept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let accept: Vec<f64> = log_accept.iter().map(|a| (a - max).exp()).collect();
    let picker = WeightedIndex::new(&accept)
        .map_err(|e| Error::InvalidArgument(format!("degenerate selection weights: {e}")))?;

    Ok((0..n)
        .map(|_| {
            let i = picker.sample(rng);
            Sample { text: ds.samples[i].text.clone(), outcome: ds.samples[i].outcome + strength * u[i] }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unigram_one(vocab: Vocab, sd: f64) -> Population {
        let mut w = vec![0.0; vocab.feature_dim(FeatureOrder::Bigram)];
        w[2] = 1.0;
        Population::new(vocab, w, sd).unwrap()
    }

    #[test]
    fn noiseless_outcomes() {
        let v = Vocab::new(2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Population::constant(v, 5.0, 0.0).unwrap();
        for x in enumerate_texts(&v).unwrap() {
            assert_eq!(c.potential_outcome(&x, &mut rng), 5.0);
        }
        let pop = unigram_one(v, 0.0);
        let x = Text::new(vec![1, 1, 1, 1], &v).unwrap();
        assert_eq!(pop.potential_outcome(&x, &mut rng), 4.0);
    }

    #[test]
    fn noisy_outcome_mean() {
        let v = Vocab::new(2, 4).unwrap();
        let pop = unigram_one(v, 1.0);
        let x = Text::new(vec![1, 0, 1, 1], &v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mean = (0..n).map(|_| pop.potential_outcome(&x, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 3.0).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn true_value_examples() {
        let v = Vocab::new(2, 2).unwrap();
        let uniform = Policy::uniform(v, 1).unwrap();
        let c = Population::constant(v, 2.5, 1.0).unwrap();
        assert!((true_value(&uniform, &c).unwrap() - 2.5).abs() < 1e-12);
        let pop = unigram_one(v, 3.0);
        assert!((true_value(&uniform, &pop).unwrap() - 1.0).abs() < 1e-12);
        let target = Text::new(vec![1, 0], &v).unwrap();
        let point = Policy::point_mass(v, 1, &target, 800.0).unwrap();
        assert!((true_value(&point, &pop).unwrap() - pop.g(&target)).abs() < 1e-12);
    }

    #[test]
    fn experiment_with_deterministic_assignment() {
        let v = Vocab::new(3, 3).unwrap();
        let target = Text::new(vec![2, 1, 0], &v).unwrap();
        let assign = Policy::point_mass(v, 1, &target, 60.0).unwrap();
        let pop = Population::random(v, 1.0, 1.0, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ds = run_experiment(&pop, &assign, "point", 100, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(ds.len(), 100);
        assert!(ds.samples().iter().all(|s| s.text == target && s.outcome == pop.g(&target)));
        assert!(run_experiment(&pop, &assign, "point", 0, &mut ChaCha8Rng::seed_from_u64(2)).is_err());
    }

    #[test]
    fn negation_is_an_involution() {
        let v = Vocab::new(2, 1).unwrap();
        let samples = [3.0, -1.0, 0.0]
            .iter()
            .map(|&y| Sample { text: Text::new(vec![0], &v).unwrap(), outcome: y })
            .collect();
        let ds = LabeledDataset::new(v, samples, Provenance::Randomized { assignment: "u".into() }).unwrap();
        let pop = Population::constant(v, 0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let neg = confound(&ds, &ConfounderSpec::Negation, &pop, &mut rng).unwrap();
        assert_eq!(neg.outcomes(), vec![-3.0, 1.0, -0.0]);
        assert_eq!(neg.provenance(), &Provenance::Observational { confounder: "negation".into() });
        assert!(matches!(
            confound(&neg, &ConfounderSpec::Negation, &pop, &mut rng),
            Err(Error::AlreadyObservational)
        ));
        // applying the transform twice restores the original outcomes
        assert_eq!(negate(&negate(ds.samples())), ds.samples().to_vec());
    }

    #[test]
    fn jsonl_roundtrip() {
        let v = Vocab::new(3, 4).unwrap();
        let pop = Population::random(v, 1.0, 1.0, 2.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let assign = Policy::uniform(v, 1).unwrap();
        let ds = run_experiment(&pop, &assign, "uniform", 50, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let back = LabeledDataset::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, ds);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().contains("\"randomized\""));
        assert_eq!(text.lines().count(), 51);
    }

    #[test]
    fn jsonl_reports_bad_line() {
        let v = Vocab::new(2, 2).unwrap();
        let bad = format!(
            "{}\n{{\"tokens\":[0,1],\"outcome\":1.0}}\n{{\"tokens\":[0,2],\"outcome\":1.0}}\n",
            serde_json::to_string(&HeaderLine {
                header: DatasetHeader {
                    format: DATASET_FORMAT.into(),
                    vocab: v,
                    provenance: Provenance::Randomized { assignment: "x".into() },
                    n: 2
                }
            })
            .unwrap()
        );
        match LabeledDataset::read_jsonl(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
