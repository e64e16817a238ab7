//! Tabular autoregressive softmax policies over fixed-length texts.
//!
//! A policy of order `k` conditions the token at position `t` on the
//! previous `min(k, t)` tokens. Every position has its own table of context
//! rows, so the parameter count is `sum_t V^min(k,t) * V`. Densities,
//! samples and score functions are all exact.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textspace::{enumerate_texts, Text, Vocab};

/// Logit assigned to tokens never observed in a context by an unsmoothed
/// maximum-likelihood fit. Finite, but far enough down that the token's
/// probability underflows to zero.
pub const UNSEEN_LOGIT: f64 = -1.0e3;

pub const MAX_ORDER: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    vocab: Vocab,
    order: usize,
    /// First row index of each position's block of context rows.
    row_base: Vec<usize>,
    logits: Vec<f64>,
}

/// A tensor shaped like [`Policy`] logits, used for score functions and
/// objective gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    width: usize,
    values: Vec<f64>,
}

fn row_layout(vocab: &Vocab, order: usize) -> (Vec<usize>, usize) {
    let mut base = Vec::with_capacity(vocab.seq_len);
    let mut rows = 0usize;
    for t in 0..vocab.seq_len {
        base.push(rows);
        rows += vocab.size.pow(order.min(t) as u32);
    }
    (base, rows)
}

impl Policy {
    /// All-zero logits: the uniform distribution over texts.
    pub fn uniform(vocab: Vocab, order: usize) -> Result<Self> {
        vocab.validate()?;
        if order > MAX_ORDER {
            return Err(Error::InvalidArgument(format!(
                "policy order must be at most {MAX_ORDER}, got {order}"
            )));
        }
        let (row_base, rows) = row_layout(&vocab, order);
        Ok(Self { vocab, order, row_base, logits: vec![0.0; rows * vocab.size] })
    }

    pub fn from_logits(vocab: Vocab, order: usize, logits: Vec<f64>) -> Result<Self> {
        let mut policy = Self::uniform(vocab, order)?;
        if logits.len() != policy.logits.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} logits, got {}",
                policy.logits.len(),
                logits.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("logits must be finite".into()));
        }
        policy.logits = logits;
        Ok(policy)
    }

    /// Logits drawn i.i.d. from `Normal(0, scale^2)`.
    pub fn random<R: Rng + ?Sized>(vocab: Vocab, order: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let mut policy = Self::uniform(vocab, order)?;
        for l in policy.logits.iter_mut() {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            *l = scale * z;
        }
        Ok(policy)
    }

    /// A policy that puts `gap` logits of margin on each token of `target`
    /// in every context, concentrating almost all mass on `target`.
    pub fn point_mass(vocab: Vocab, order: usize, target: &Text, gap: f64) -> Result<Self> {
        target.validate(&vocab)?;
        let mut policy = Self::uniform(vocab, order)?;
        let v = vocab.size;
        for t in 0..vocab.seq_len {
            let rows = vocab.size.pow(order.min(t) as u32);
            for ctx in 0..rows {
                let start = (policy.row_base[t] + ctx) * v;
                policy.logits[start + target.tokens()[t] as usize] = gap;
            }
        }
        Ok(policy)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn param_count(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Offset into the logits of the context row used at position `t`.
    #[inline]
    fn row_start(&self, t: usize, tokens: &[u32]) -> usize {
        let k = self.order.min(t);
        let ctx = tokens[t - k..t]
            .iter()
            .fold(0usize, |acc, &x| acc * self.vocab.size + x as usize);
        (self.row_base[t] + ctx) * self.vocab.size
    }

    #[inline]
    fn row(&self, start: usize) -> &[f64] {
        &self.logits[start..start + self.vocab.size]
    }

    pub fn log_prob(&self, text: &Text) -> f64 {
        let tokens = text.tokens();
        let mut total = 0.0;
        for (t, &x) in tokens.iter().enumerate() {
            let row = self.row(self.row_start(t, tokens));
            total += row[x as usize] - log_sum_exp(row);
        }
        total
    }

    /// Ancestral sampling, one uniform draw per position.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Text {
        let mut tokens = vec![0u32; self.vocab.seq_len];
        for t in 0..self.vocab.seq_len {
            let row = self.row(self.row_start(t, &tokens));
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|l| (l - max).exp()).sum();
            let mut u = rng.random::<f64>() * total;
            let mut chosen = row.len() - 1;
            for (v, l) in row.iter().enumerate() {
                let p = (l - max).exp();
                if u < p {
                    chosen = v;
                    break;
                }
                u -= p;
            }
            tokens[t] = chosen as u32;
        }
        Text::from_tokens_unchecked(tokens)
    }

    /// Score function: gradient of `log_prob(text)` with respect to logits.
    pub fn grad_log_prob(&self, text: &Text) -> ParamGrad {
        let mut grad = ParamGrad::zeros_like(self);
        self.accumulate_grad_log_prob(text, 1.0, &mut grad);
        grad
    }

    /// `grad += scale * grad_log_prob(text)` without allocating.
    pub fn accumulate_grad_log_prob(&self, text: &Text, scale: f64, grad: &mut ParamGrad) {
        let tokens = text.tokens();
        for (t, &x) in tokens.iter().enumerate() {
            let start = self.row_start(t, tokens);
            let row = self.row(start);
            let lse = log_sum_exp(row);
            for (v, l) in row.iter().enumerate() {
                let indicator = if v == x as usize { 1.0 } else { 0.0 };
                grad.values[start + v] += scale * (indicator - (l - lse).exp());
            }
        }
    }

    /// `log_prob` of every text, in enumeration order.
    pub fn log_probs_enumerated(&self) -> Result<Vec<f64>> {
        Ok(enumerate_texts(&self.vocab)?.iter().map(|x| self.log_prob(x)).collect())
    }

    /// Exact probability of every text, in enumeration order.
    pub fn distribution(&self) -> Result<Vec<f64>> {
        Ok(self.log_probs_enumerated()?.into_iter().map(f64::exp).collect())
    }

    /// Closed-form add-`alpha` maximum-likelihood fit. With `alpha == 0`,
    /// contexts absent from the corpus fall back to uniform and unobserved
    /// tokens in observed contexts get [`UNSEEN_LOGIT`].
    pub fn mle_fit(texts: &[Text], vocab: Vocab, order: usize, alpha: f64) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("smoothing must be finite and >= 0, got {alpha}")));
        }
        let mut policy = Self::uniform(vocab, order)?;
        let mut counts = vec![0.0f64; policy.logits.len()];
        for text in texts {
            text.validate(&vocab)?;
            let tokens = text.tokens();
            for (t, &x) in tokens.iter().enumerate() {
                counts[policy.row_start(t, tokens) + x as usize] += 1.0;
            }
        }
        let v = vocab.size;
        for (row_counts, row_logits) in counts.chunks(v).zip(policy.logits.chunks_mut(v)) {
            let total: f64 = row_counts.iter().sum();
            if total == 0.0 && alpha == 0.0 {
                row_logits.fill(0.0);
                continue;
            }
            let denom = (total + alpha * v as f64).ln();
            for (c, l) in row_counts.iter().zip(row_logits.iter_mut()) {
                *l = if c + alpha > 0.0 { (c + alpha).ln() - denom } else { UNSEEN_LOGIT };
            }
        }
        Ok(policy)
    }

    /// Ascent step on the logits: `theta += step * direction`.
    pub fn apply_update(&mut self, direction: &ParamGrad, step: f64) {
        for (l, d) in self.logits.iter_mut().zip(&direction.values) {
            *l += step * d;
        }
    }

    fn entries(&self) -> Vec<LogitEntry> {
        let v = self.vocab.size;
        let mut out = Vec::with_capacity(self.logits.len());
        for t in 0..self.vocab.seq_len {
            let k = self.order.min(t);
            for ctx in 0..v.pow(k as u32) {
                let mut prefix = vec![0u32; k];
                let mut rest = ctx;
                for slot in prefix.iter_mut().rev() {
                    *slot = (rest % v) as u32;
                    rest /= v;
                }
                let start = (self.row_base[t] + ctx) * v;
                for token in 0..v {
                    out.push(LogitEntry {
                        position: t,
                        prefix: prefix.clone(),
                        token: token as u32,
                        logit: self.logits[start + token],
                    });
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PolicyFile {
            format: POLICY_FORMAT.to_string(),
            vocab: self.vocab,
            order: self.order,
            logits: self.entries(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(s)?;
        if file.format != POLICY_FORMAT {
            return Err(Error::Parse { line: 1, message: format!("unknown policy format {:?}", file.format) });
        }
        let mut policy = Self::uniform(file.vocab, file.order)?;
        let mut seen = vec![false; policy.logits.len()];
        for entry in &file.logits {
            let k = policy.order.min(entry.position);
            if entry.position >= file.vocab.seq_len
                || entry.prefix.len() != k
                || entry.token as usize >= file.vocab.size
                || entry.prefix.iter().any(|&p| p as usize >= file.vocab.size)
            {
                return Err(Error::InvalidArgument(format!("malformed logit entry {entry:?}")));
            }
            if !entry.logit.is_finite() {
                return Err(Error::InvalidArgument("logits must be finite".into()));
            }
            let ctx = entry.prefix.iter().fold(0usize, |acc, &x| acc * file.vocab.size + x as usize);
            let idx = (policy.row_base[entry.position] + ctx) * file.vocab.size + entry.token as usize;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::InvalidArgument(format!("duplicate logit entry {entry:?}")));
            }
            policy.logits[idx] = entry.logit;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("policy file is missing logit entries".into()));
        }
        Ok(policy)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

const POLICY_FORMAT: &str = "cpo-policy/1";

#[derive(Debug, Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    vocab: Vocab,
    order: usize,
    logits: Vec<LogitEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogitEntry {
    position: usize,
    prefix: Vec<u32>,
    token: u32,
    logit: f64,
}

impl ParamGrad {
    pub fn zeros_like(policy: &Policy) -> Self {
        Self { width: policy.vocab.size, values: vec![0.0; policy.logits.len()] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamGrad) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|g| *g *= factor);
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, other: &ParamGrad, factor: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    /// Sum over tokens of each context row.
    pub fn row_sums(&self) -> Vec<f64> {
        self.values.chunks(self.width).map(|r| r.iter().sum()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|g| g.is_finite())
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
