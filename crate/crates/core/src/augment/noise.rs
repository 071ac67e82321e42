use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::SyntheticPair;
use crate::corpus::{special, TokenId};
use crate::{seed, Error, Result};

/// Deletion, substitution and local permutation of source tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub p_delete: f64,
    pub p_substitute: f64,
    pub permute_window: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            p_delete: 0.1,
            p_substitute: 0.1,
            permute_window: 3,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_delete", self.p_delete), ("p_substitute", self.p_substitute)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Token used for substitutions and for fully deleted sources.
pub const FILLER: TokenId = special::UNK;

/// Noised copy of `pair`; the original is left to the caller.
pub fn add_noise_with(pair: &SyntheticPair, cfg: &NoiseConfig, rng: &mut ChaCha8Rng) -> SyntheticPair {
    let kept: Vec<TokenId> = pair
        .src
        .tokens
        .iter()
        .copied()
        .filter(|_| !rng.gen_bool(cfg.p_delete))
        .collect();
    let mut tokens: Vec<TokenId> = kept
        .into_iter()
        .map(|t| if rng.gen_bool(cfg.p_substitute) { FILLER } else { t })
        .collect();
    if tokens.is_empty() {
        tokens.push(FILLER);
    }
    if cfg.permute_window > 0 {
        let span = (cfg.permute_window + 1) as f64;
        let mut keyed: Vec<(f64, TokenId)> = tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| (i as f64 + rng.gen_range(0.0..span), t))
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
        tokens = keyed.into_iter().map(|(_, t)| t).collect();
    }
    let mut src = pair.src.clone();
    src.tokens = tokens;
    SyntheticPair {
        src,
        tgt: pair.tgt.clone(),
        provenance: pair.provenance.noised(),
    }
}

/// [`add_noise_with`] drawing from a stream derived from `cfg.seed`.
pub fn add_noise(pair: &SyntheticPair, cfg: &NoiseConfig) -> SyntheticPair {
    add_noise_with(pair, cfg, &mut seed::rng(cfg.seed, "noise", 0))
}

/// Span masking with segment shuffling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BartNoiseConfig {
    pub lambda: f64,
    pub p_mask: f64,
    pub extra_mask_insertions: usize,
    pub permute_segments: bool,
    pub seed: u64,
}

impl Default for BartNoiseConfig {
    fn default() -> Self {
        BartNoiseConfig {
            lambda: 3.5,
            p_mask: 0.35,
            extra_mask_insertions: 1,
            permute_segments: true,
            seed: 0,
        }
    }
}

impl BartNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.p_mask) {
            return Err(Error::Config(format!("p_mask {} outside [0, 1]", self.p_mask)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BartNoised {
    pub noisy: Vec<TokenId>,
    pub original: Vec<TokenId>,
    /// Original tokens hidden under masks.
    pub masked: usize,
    /// Span lengths as drawn, before the last one is trimmed to fit.
    pub drawn_spans: Vec<usize>,
}

/// BART-style noise.
///
/// Non-zero Poisson(λ) span lengths are drawn until they cover
/// `round(p_mask·n)` tokens (the last span is trimmed). Spans are placed in
/// distinct gaps between the unmasked tokens and each becomes one mask.
/// Then extra masks are inserted at random positions and, if enabled, the
/// mask-terminated segments are shuffled.
pub fn bart_noise_with(tokens: &[TokenId], cfg: &BartNoiseConfig, rng: &mut ChaCha8Rng) -> BartNoised {
    let n = tokens.len();
    let target = ((cfg.p_mask * n as f64).round() as usize).min(n);
    let poisson = Poisson::new(cfg.lambda).expect("validated lambda");
    let mut spans = Vec::new();
    let mut drawn = Vec::new();
    let mut covered = 0;
    while covered < target {
        let l = poisson.sample(rng) as usize;
        if l == 0 {
            continue;
        }
        drawn.push(l);
        let l = l.min(target - covered);
        spans.push(l);
        covered += l;
    }
    // u unmasked tokens leave u + 1 gaps; merge spans if there are too many.
    let gaps = n - target + 1;
    while spans.len() > gaps {
        let last = spans.pop().unwrap();
        *spans.last_mut().unwrap() += last;
    }
    spans.shuffle(rng);
    let mut chosen = rand::seq::index::sample(rng, gaps, spans.len()).into_vec();
    chosen.sort_unstable();

    let mut noisy = Vec::with_capacity(n + 2);
    let mut src = tokens.iter();
    let mut next = 0;
    for gap in 0..gaps {
        if next < chosen.len() && chosen[next] == gap {
            for _ in 0..spans[next] {
                src.next();
            }
            noisy.push(special::MASK);
            next += 1;
        }
        if let Some(&t) = src.next() {
            noisy.push(t);
        }
    }
    for _ in 0..cfg.extra_mask_insertions {
        let at = rng.gen_range(0..=noisy.len());
        noisy.insert(at, special::MASK);
    }
    if cfg.permute_segments {
        let mut segments: Vec<Vec<TokenId>> = Vec::new();
        let mut cur = Vec::new();
        for t in noisy {
            cur.push(t);
            if t == special::MASK {
                segments.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            segments.push(cur);
        }
        segments.shuffle(rng);
        noisy = segments.concat();
    }
    BartNoised {
        noisy,
        original: tokens.to_vec(),
        masked: covered,
        drawn_spans: drawn,
    }
}

/// [`bart_noise_with`] drawing from a stream derived from `cfg.seed`.
pub fn bart_noise(tokens: &[TokenId], cfg: &BartNoiseConfig) -> BartNoised {
    bart_noise_with(tokens, cfg, &mut seed::rng(cfg.seed, "bart", 0))
}
