//! Linear outcome models fit by closed-form ridge regression on n-gram
//! count features.
//!
//! The intercept is never penalized. Token 0 is the reference level: its
//! unigram column (and, at bigram order, the `(0, 0)` column) is dropped
//! before solving, because those columns are exact linear combinations of
//! the intercept and the remaining counts. The stored weight vector keeps
//! the full feature layout with zeros in the reference slots.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{LabeledDataset, Population};
use crate::textspace::{featurize_with, linear_score, reference_columns, FeatureOrder, Text, Vocab};

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-6;

/// Relative pivot size below which an unpenalized normal matrix counts as
/// rank-deficient.
const SINGULAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub vocab: Vocab,
    pub feature_order: FeatureOrder,
    pub ridge_lambda: f64,
    pub weights: Vec<f64>,
    /// Mean squared error on the training rows, when fit from data.
    #[serde(default)]
    pub train_mse: Option<f64>,
}

impl OutcomeModel {
    pub fn from_weights(vocab: Vocab, feature_order: FeatureOrder, weights: Vec<f64>) -> Result<Self> {
        let dim = vocab.feature_dim(feature_order);
        if weights.len() != dim {
            return Err(Error::InvalidArgument(format!("expected {dim} weights, got {}", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("outcome model weights must be finite".into()));
        }
        Ok(Self { vocab, feature_order, ridge_lambda: 0.0, weights, train_mse: None })
    }

    /// Predicts zero everywhere.
    pub fn zero(vocab: Vocab, feature_order: FeatureOrder) -> Self {
        Self {
            vocab,
            feature_order,
            ridge_lambda: 0.0,
            weights: vec![0.0; vocab.feature_dim(feature_order)],
            train_mse: None,
        }
    }

    /// The population's true mean outcome function.
    pub fn exact(pop: &Population) -> Self {
        Self {
            vocab: pop.vocab,
            feature_order: FeatureOrder::Bigram,
            ridge_lambda: 0.0,
            weights: pop.g_weights.clone(),
            train_mse: None,
        }
    }

    pub fn negated(&self) -> Self {
        let mut m = self.clone();
        m.weights.iter_mut().for_each(|w| *w = -*w);
        m
    }

    /// Ridge fit: `(Phi^T Phi + lambda * I') w = Phi^T y` where `I'` skips
    /// the intercept.
    pub fn fit(ds: &LabeledDataset, feature_order: FeatureOrder, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("ridge lambda must be finite and >= 0, got {lambda}")));
        }
        let vocab = *ds.vocab();
        let dim = vocab.feature_dim(feature_order);
        let dropped = reference_columns(&vocab, feature_order);
        let kept: Vec<usize> = (0..dim).filter(|c| !dropped.contains(c)).collect();
        let p = kept.len();

        let mut gram = vec![0.0; p * p];
        let mut rhs = vec![0.0; p];
        let mut row = vec![0.0; p];
        for s in ds.samples() {
            let f = featurize_with(&s.text, &vocab, feature_order);
            for (slot, &c) in row.iter_mut().zip(&kept) {
                *slot = f.0[c];
            }
            for i in 0..p {
                if row[i] == 0.0 {
                    continue;
                }
                rhs[i] += row[i] * s.outcome;
                for j in 0..=i {
                    gram[i * p + j] += row[i] * row[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                gram[j * p + i] = gram[i * p + j];
            }
        }
        // column 0 of the reduced design is the intercept
        for i in 1..p {
            gram[i * p + i] += lambda;
        }

        let chol = cholesky(&gram, p, lambda == 0.0).ok_or(Error::SingularDesign)?;
        let solved = cholesky_solve(&chol, p, &rhs);

        let mut weights = vec![0.0; dim];
        for (&c, w) in kept.iter().zip(solved) {
            weights[c] = w;
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::SingularDesign);
        }
        let mut model = Self { vocab, feature_order, ridge_lambda: lambda, weights, train_mse: None };
        let sse: f64 = ds.samples().iter().map(|s| (s.outcome - model.predict(&s.text)).powi(2)).sum();
        model.train_mse = Some(sse / ds.len() as f64);
        Ok(model)
    }

    pub fn predict(&self, text: &Text) -> f64 {
        linear_score(&self.weights, text, &self.vocab, self.feature_order)
    }

    /// `E_{X ~ probs}[(g_hat(X) - g(X))^2]` over the enumeration.
    pub fn prediction_mse(&self, pop: &Population, probs: &[f64]) -> Result<f64> {
        let texts = crate::textspace::enumerate_texts(&self.vocab)?;
        Ok(texts
            .iter()
            .zip(probs)
            .map(|(x, p)| p * (self.predict(x) - pop.g(x)).powi(2))
            .sum())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ModelFile { format: MODEL_FORMAT.into(), model: self.clone() };
        std::fs::write(path, serde_json::to_string_pretty(&file)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Parse { line: 1, message: format!("unknown outcome model format {:?}", file.format) });
        }
        let m = file.model;
        let mut checked = Self::from_weights(m.vocab, m.feature_order, m.weights)?;
        checked.ridge_lambda = m.ridge_lambda;
        checked.train_mse = m.train_mse;
        Ok(checked)
    }
}

const MODEL_FORMAT: &str = "cpo-outcome-model/1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    #[serde(flatten)]
    model: OutcomeModel,
}

/// Lower-triangular Cholesky factor of a symmetric `p x p` matrix, or `None`
/// when a pivot is non-positive (or, if `strict`, tiny relative to the
/// diagonal).
fn cholesky(a: &[f64], p: usize, strict: bool) -> Option<Vec<f64>> {
    let scale = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max);
    let mut l = vec![0.0; p * p];
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= l[j * p + k] * l[j * p + k];
        }
        let floor = if strict { SINGULAR_TOL * scale } else { 0.0 };
        if !(d > floor) {
            return None;
        }
        let d = d.sqrt();
        l[j * p + j] = d;
        for i in (j + 1)..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            l[i * p + j] = s / d;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], p: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in (i + 1)..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    x
}
