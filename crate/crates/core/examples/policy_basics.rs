//! Tabular autoregressive policies: sampling, log-probabilities, the score
//! function, and maximum-likelihood fitting from text.
//!
//! cargo run --example policy_basics

use cpo::policy::Policy;
use cpo::textspace::{enumerate_texts, featurize, Text, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cpo::Result<()> {
    let vocab = Vocab::new(3, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let policy = Policy::random(vocab, 1, 1.0, &mut rng)?;
    println!("order-1 policy over {} texts, {} logits", vocab.enumerable_size()?, policy.param_count());

    let probs = policy.distribution()?;
    let texts = enumerate_texts(&vocab)?;
    let mut ranked: Vec<_> = texts.iter().zip(&probs).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(a.1));
    println!("most likely texts:");
    for (t, p) in ranked.iter().take(3) {
        println!("  {t}  p = {p:.4}");
    }

    let x = policy.sample(&mut rng);
    let grad = policy.grad_log_prob(&x);
    println!("sampled {x}: log p = {:.4}, |score| = {:.4}", policy.log_prob(&x), grad.norm());
    println!("features of {x}: {:?}", featurize(&x, &vocab).values());

    // Refit from samples; with many draws the fit approaches the source.
    let draws: Vec<Text> = (0..20_000).map(|_| policy.sample(&mut rng)).collect();
    let fitted = Policy::mle_fit(&draws, vocab, 1, 1.0)?;
    let tv: f64 = fitted.distribution()?.iter().zip(&probs).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
    println!("total variation between source and refit: {tv:.4}");
    Ok(())
}
