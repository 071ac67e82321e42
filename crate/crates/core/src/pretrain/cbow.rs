use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fingerprint, EmbeddingSet};
use crate::corpus::TokenId;
use crate::nn::Mat;
use crate::{seed, Error, Result};

pub const MIN_SENTENCES: usize = 100;

/// Negative-sampling CBOW hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbowConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub min_count: u64,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to 1e-4 of itself.
    pub lr: f64,
    pub seed: u64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            dim: 64,
            window: 5,
            negatives: 5,
            min_count: 2,
            epochs: 5,
            lr: 0.05,
            seed: 1,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x > 20.0 {
        1.0
    } else if x < -20.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Trains CBOW vectors on token sequences of one language.
///
/// Only tokens seen at least `min_count` times get a row; the others are
/// dropped from the context windows. Rows are the sum of input and output
/// vectors, so tokens that predict each other end up close.
/// Single-threaded and deterministic.
pub fn train_cbow(lang: &str, sentences: &[Vec<TokenId>], cfg: &CbowConfig) -> Result<EmbeddingSet> {
    if sentences.len() < MIN_SENTENCES {
        return Err(Error::Data(format!(
            "CBOW needs at least {MIN_SENTENCES} sentences, got {}",
            sentences.len()
        )));
    }
    if cfg.dim == 0 || cfg.window == 0 {
        return Err(Error::Config("CBOW dim and window must be positive".into()));
    }
    let mut freq: BTreeMap<TokenId, u64> = BTreeMap::new();
    for s in sentences {
        for &t in s {
            *freq.entry(t).or_default() += 1;
        }
    }
    let kept: Vec<(TokenId, u64)> = freq.into_iter().filter(|&(_, c)| c >= cfg.min_count).collect();
    if kept.is_empty() {
        return Err(Error::Data("no token reaches min_count".into()));
    }
    let tokens: Vec<TokenId> = kept.iter().map(|&(t, _)| t).collect();
    let counts: Vec<u64> = kept.iter().map(|&(_, c)| c).collect();
    let index: BTreeMap<TokenId, usize> = tokens.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let corpus: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().filter_map(|t| index.get(t).copied()).collect())
        .collect();

    // Unigram^0.75 table for negatives.
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let total: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cdf.push(acc);
    }

    let (v, d) = (tokens.len(), cfg.dim);
    let mut rng = seed::rng(cfg.seed, "cbow", 0);
    let mut w_in: Vec<f64> = (0..v * d).map(|_| (rng.gen::<f64>() - 0.5) / d as f64).collect();
    let mut w_out = vec![0.0f64; v * d];
    let n_tokens: usize = corpus.iter().map(Vec::len).sum();
    let total_steps = (n_tokens * cfg.epochs).max(1) as f64;
    let mut done = 0usize;
    let mut h = vec![0.0f64; d];
    let mut e = vec![0.0f64; d];

    for _ in 0..cfg.epochs {
        for s in &corpus {
            for pos in 0..s.len() {
                let lr = (cfg.lr * (1.0 - done as f64 / total_steps)).max(cfg.lr * 1e-4);
                done += 1;
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(s.len());
                let ctx: Vec<usize> = (lo..hi).filter(|&p| p != pos).map(|p| s[p]).collect();
                if ctx.is_empty() {
                    continue;
                }
                h.fill(0.0);
                for &c in &ctx {
                    for (a, b) in h.iter_mut().zip(&w_in[c * d..(c + 1) * d]) {
                        *a += b;
                    }
                }
                for a in h.iter_mut() {
                    *a /= ctx.len() as f64;
                }
                e.fill(0.0);
                for k in 0..=cfg.negatives {
                    let (target, label) = if k == 0 {
                        (s[pos], 1.0)
                    } else {
                        let u: f64 = rng.gen();
                        let t = cdf.partition_point(|&c| c < u).min(v - 1);
                        // Tokens in the window are not negatives for it.
                        if t == s[pos] || ctx.contains(&t) {
                            continue;
                        }
                        (t, 0.0)
                    };
                    let out = &mut w_out[target * d..(target + 1) * d];
                    let dot: f64 = h.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                    let g = (label - sigmoid(dot)) * lr;
                    for j in 0..d {
                        e[j] += g * out[j];
                        out[j] += g * h[j];
                    }
                }
                for &c in &ctx {
                    for (a, b) in w_in[c * d..(c + 1) * d].iter_mut().zip(&e) {
                        *a += b;
                    }
                }
            }
        }
    }
    Ok(EmbeddingSet {
        lang: lang.to_string(),
        tokens,
        counts,
        matrix: Mat::from_vec(v, d, w_in.iter().zip(&w_out).map(|(a, b)| (a + b) as f32).collect()),
        fingerprint: fingerprint(sentences),
    })
}
