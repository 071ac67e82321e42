use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{bart_noise_with, BartNoiseConfig};
use crate::corpus::{TaggedSentence, TokenId};
use crate::model::{Model, TrainPair};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DaeMode {
    Bilingual,
    Multilingual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaeConfig {
    pub mode: DaeMode,
    pub languages: Vec<String>,
    /// Language downsampled to the largest of the others (defaults to the
    /// first language).
    pub base: Option<String>,
    /// Sentences per language set aside for the reconstruction check.
    pub holdout: usize,
    pub epochs: usize,
    pub noise: BartNoiseConfig,
    pub seed: u64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        DaeConfig {
            mode: DaeMode::Bilingual,
            languages: Vec::new(),
            base: None,
            holdout: 100,
            epochs: 2,
            noise: BartNoiseConfig::default(),
            seed: 1,
        }
    }
}

impl DaeConfig {
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            DaeMode::Bilingual if self.languages.len() != 2 => Err(Error::Config(format!(
                "bilingual denoising needs exactly 2 languages, got {}",
                self.languages.len()
            ))),
            DaeMode::Multilingual if self.languages.len() < 2 => Err(Error::Config(format!(
                "multilingual denoising needs at least 2 languages, got {}",
                self.languages.len()
            ))),
            _ => self.noise.validate(),
        }
    }
}

/// Tokenized monolingual sentences of one language.
#[derive(Clone, Debug)]
pub struct MonoData {
    pub lang: String,
    pub tag: TokenId,
    pub sentences: Vec<Vec<TokenId>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DaeReport {
    /// Held-out reconstruction loss per language before training.
    pub holdout_before: Vec<(String, f64)>,
    pub holdout_after: Vec<(String, f64)>,
    /// Training instances per language after balancing.
    pub instances: Vec<(String, usize)>,
    pub steps: u64,
}

fn instance(tag: TokenId, noisy: Vec<TokenId>, original: Vec<TokenId>) -> TrainPair {
    TrainPair {
        src: TaggedSentence {
            tokens: noisy,
            src_tag: tag,
            tgt_tag: tag,
            origin: None,
        },
        tgt: original,
    }
}

fn mean_loss(model: &Model, pairs: &[TrainPair]) -> Result<f64> {
    let mut total = 0.0;
    let mut weight = 0.0;
    for chunk in pairs.chunks(model.config().max_batch) {
        let w: usize = chunk.iter().map(|p| p.tgt.len() + 1).sum();
        total += model.eval_loss(chunk)? * w as f64;
        weight += w as f64;
    }
    Ok(if weight > 0.0 { total / weight } else { f64::NAN })
}

/// Trains `model` to reconstruct sentences from BART-noised copies, each
/// tagged `lang → lang`. The base language is downsampled to the size of
/// the largest other language; all languages are interleaved.
pub fn pretrain_dae(model: &mut Model, cfg: &DaeConfig, mono: &[MonoData]) -> Result<DaeReport> {
    cfg.validate()?;
    let max_len = model.config().max_len;
    let fits = |s: &Vec<TokenId>| !s.is_empty() && s.len() + 4 <= max_len;
    let mut train: Vec<(String, TokenId, Vec<Vec<TokenId>>)> = Vec::new();
    let mut holdout = Vec::new();
    for lang in &cfg.languages {
        let data = mono
            .iter()
            .find(|m| &m.lang == lang)
            .ok_or_else(|| Error::Data(format!("no monolingual data for {lang}")))?;
        let usable: Vec<Vec<TokenId>> = data.sentences.iter().filter(|s| fits(s)).cloned().collect();
        if usable.len() <= cfg.holdout {
            return Err(Error::Data(format!(
                "{lang}: {} usable sentences, holdout alone needs {}",
                usable.len(),
                cfg.holdout
            )));
        }
        let split = usable.len() - cfg.holdout;
        holdout.push((lang.clone(), data.tag, usable[split..].to_vec()));
        train.push((lang.clone(), data.tag, usable[..split].to_vec()));
    }

    let base = cfg.base.clone().unwrap_or_else(|| cfg.languages[0].clone());
    let cap = train
        .iter()
        .filter(|(l, _, _)| *l != base)
        .map(|(_, _, s)| s.len())
        .max()
        .unwrap_or(0);
    for (l, _, s) in train.iter_mut() {
        if *l == base && s.len() > cap {
            let mut rng = seed::rng(cfg.seed, "dae-downsample", 0);
            let mut keep = rand::seq::index::sample(&mut rng, s.len(), cap).into_vec();
            keep.sort_unstable();
            *s = keep.into_iter().map(|i| s[i].clone()).collect();
        }
    }

    let mut hrng = seed::rng(cfg.seed, "dae-holdout", 0);
    let held: Vec<(String, Vec<TrainPair>)> = holdout
        .iter()
        .map(|(l, tag, sents)| {
            let pairs = sents
                .iter()
                .map(|s| {
                    let n = bart_noise_with(s, &cfg.noise, &mut hrng);
                    instance(*tag, n.noisy, n.original)
                })
                .collect();
            (l.clone(), pairs)
        })
        .collect();
    let holdout_loss = |m: &Model| -> Result<Vec<(String, f64)>> {
        held.iter().map(|(l, p)| Ok((l.clone(), mean_loss(m, p)?))).collect()
    };
    let holdout_before = holdout_loss(model)?;

    let mut all: Vec<(TokenId, &Vec<TokenId>)> = train
        .iter()
        .flat_map(|(_, tag, s)| s.iter().map(move |x| (*tag, x)))
        .collect();
    let batch = model.config().max_batch;
    let start = model.step();
    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng(cfg.seed, "dae-epoch", epoch as u64);
        all.shuffle(&mut rng);
        let pairs: Vec<TrainPair> = all
            .iter()
            .map(|(tag, s)| {
                let n = bart_noise_with(s, &cfg.noise, &mut rng);
                instance(*tag, n.noisy, n.original)
            })
            .filter(|p| p.src.len() <= max_len)
            .collect();
        for chunk in pairs.chunks(batch) {
            model.train_step(chunk)?;
        }
        log::info!("denoising epoch {} done at step {}", epoch + 1, model.step());
    }
    model.languages = cfg.languages.clone();

    Ok(DaeReport {
        holdout_before,
        holdout_after: holdout_loss(model)?,
        instances: train.iter().map(|(l, _, s)| (l.clone(), s.len())).collect(),
        steps: model.step() - start,
    })
}
