//! The finite text universe: vocabularies, fixed-length texts, exact
//! enumeration, and the n-gram count features used by outcome models.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest text space that enumeration-based operations will walk.
pub const ENUMERATION_CAP: u64 = 10_000_000;

/// A vocabulary of `size` tokens and a fixed text length `seq_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocab {
    pub size: usize,
    pub seq_len: usize,
}

impl Vocab {
    pub fn new(size: usize, seq_len: usize) -> Result<Self> {
        let vocab = Self { size, seq_len };
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::InvalidVocab(format!(
                "vocabulary size must be at least 2, got {}",
                self.size
            )));
        }
        if self.seq_len < 1 {
            return Err(Error::InvalidVocab("sequence length must be at least 1".into()));
        }
        Ok(())
    }

    /// `V^L` as a float, so that oversized spaces do not overflow.
    pub fn space_size(&self) -> f64 {
        (self.size as f64).powi(self.seq_len as i32)
    }

    /// Number of texts, or `EnumerationTooLarge` above [`ENUMERATION_CAP`].
    pub fn enumerable_size(&self) -> Result<usize> {
        let size = self.space_size();
        if size > ENUMERATION_CAP as f64 {
            return Err(Error::EnumerationTooLarge { size, cap: ENUMERATION_CAP });
        }
        Ok(size as usize)
    }

    pub fn is_enumerable(&self) -> bool {
        self.space_size() <= ENUMERATION_CAP as f64
    }

    /// Lexicographic rank of `text` among all texts of this vocabulary.
    pub fn index_of(&self, text: &Text) -> usize {
        text.tokens
            .iter()
            .fold(0usize, |acc, &t| acc * self.size + t as usize)
    }

    /// Inverse of [`Vocab::index_of`].
    pub fn text_at(&self, mut index: usize) -> Text {
        let mut tokens = vec![0u32; self.seq_len];
        for slot in tokens.iter_mut().rev() {
            *slot = (index % self.size) as u32;
            index /= self.size;
        }
        Text { tokens }
    }

    pub fn feature_dim(&self, order: FeatureOrder) -> usize {
        match order {
            FeatureOrder::Unigram => 1 + self.size,
            FeatureOrder::Bigram => 1 + self.size + self.size * self.size,
        }
    }
}

/// A sequence of exactly `seq_len` token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Text {
    tokens: Vec<u32>,
}

impl Text {
    pub fn new(tokens: Vec<u32>, vocab: &Vocab) -> Result<Self> {
        let text = Self { tokens };
        text.validate(vocab)?;
        Ok(text)
    }

    pub(crate) fn from_tokens_unchecked(tokens: Vec<u32>) -> Self {
        Self { tokens }
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if self.tokens.len() != vocab.seq_len {
            return Err(Error::InvalidText(format!(
                "expected {} tokens, got {}",
                vocab.seq_len,
                self.tokens.len()
            )));
        }
        if let Some(&bad) = self.tokens.iter().find(|&&t| t as usize >= vocab.size) {
            return Err(Error::InvalidText(format!(
                "token {bad} outside vocabulary of size {}",
                vocab.size
            )));
        }
        Ok(())
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for Text {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str("]")
    }
}

/// All `V^L` texts in lexicographic order.
pub fn enumerate_texts(vocab: &Vocab) -> Result<Vec<Text>> {
    let size = vocab.enumerable_size()?;
    Ok((0..size).map(|i| vocab.text_at(i)).collect())
}

/// Which n-gram counts enter the feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum FeatureOrder {
    Unigram,
    Bigram,
}

impl TryFrom<u8> for FeatureOrder {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Self::Unigram),
            2 => Ok(Self::Bigram),
            other => Err(format!("feature order must be 1 or 2, got {other}")),
        }
    }
}

impl From<FeatureOrder> for u8 {
    fn from(o: FeatureOrder) -> u8 {
        match o {
            FeatureOrder::Unigram => 1,
            FeatureOrder::Bigram => 2,
        }
    }
}

/// Intercept, unigram counts and (for bigram order) adjacent-pair counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.0.iter().zip(weights).map(|(f, w)| f * w).sum()
    }
}

/// Order-2 features: `[1, unigram counts (V), bigram counts (V*V)]`.
pub fn featurize(text: &Text, vocab: &Vocab) -> FeatureVector {
    featurize_with(text, vocab, FeatureOrder::Bigram)
}

pub fn featurize_with(text: &Text, vocab: &Vocab, order: FeatureOrder) -> FeatureVector {
    let mut values = vec![0.0; vocab.feature_dim(order)];
    values[0] = 1.0;
    for &t in &text.tokens {
        values[1 + t as usize] += 1.0;
    }
    if order == FeatureOrder::Bigram {
        let base = 1 + vocab.size;
        for pair in text.tokens.windows(2) {
            values[base + pair[0] as usize * vocab.size + pair[1] as usize] += 1.0;
        }
    }
    FeatureVector(values)
}

/// `<weights, featurize_with(text, order)>` without materializing the
/// feature vector. Every linear score in the crate goes through here so that
/// equal weights give bitwise-equal scores.
pub fn linear_score(weights: &[f64], text: &Text, vocab: &Vocab, order: FeatureOrder) -> f64 {
    let mut acc = weights[0];
    for &t in &text.tokens {
        acc += weights[1 + t as usize];
    }
    if order == FeatureOrder::Bigram {
        let base = 1 + vocab.size;
        for pair in text.tokens.windows(2) {
            acc += weights[base + pair[0] as usize * vocab.size + pair[1] as usize];
        }
    }
    acc
}

/// Feature columns that are linear combinations of the others on every
/// text: unigram counts sum to `L` and bigram counts sum to `L - 1`. Token 0
/// is the reference level, so its unigram and `(0, 0)` bigram columns are
/// dropped when fitting.
pub fn reference_columns(vocab: &Vocab, order: FeatureOrder) -> Vec<usize> {
    match order {
        FeatureOrder::Unigram => vec![1],
        FeatureOrder::Bigram => vec![1, 1 + vocab.size],
    }
}
