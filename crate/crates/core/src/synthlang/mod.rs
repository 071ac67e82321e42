//! Synthetic comparable corpora in cipher languages.
//!
//! A base language samples sentences from per-document topical unigram
//! mixtures. Other languages are deterministic ciphers of it: a bijective
//! lexicon map, a bounded local reordering and an optional glyph map onto
//! another script. Because the cipher is invertible, gold sentence
//! alignments and reference translations are exact.

mod cipher;
mod suite;

use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use cipher::{apply_cipher, reorder, CipherSpec, SCRIPTS};
pub use suite::{gen_suite, gen_suite_with, PairData, Profile, ProfileParams, Suite};

use crate::{seed, Error, Result};

pub const MIN_VOCAB: usize = 50;
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Generates `n` distinct syllabic word forms, shortest first.
pub(crate) fn word_forms(n: usize, rng: &mut ChaCha8Rng, avoid: &dyn Fn(&str) -> bool) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut syllables = 1;
    let mut misses = 0;
    while out.len() < n {
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(*CONSONANTS.choose(rng).unwrap() as char);
            w.push(*VOWELS.choose(rng).unwrap() as char);
        }
        if !avoid(&w) && seen.insert(w.clone()) {
            out.push(w);
            misses = 0;
        } else {
            misses += 1;
            // Switch to longer words once short forms are mostly used up.
            if misses > 50 {
                syllables += 1;
                misses = 0;
            }
        }
    }
    out.sort_by_key(|w| w.len());
    out
}

/// The base vocabulary with Zipfian global frequencies.
#[derive(Clone, Debug)]
pub struct BaseLanguage {
    words: Vec<String>,
    cdf: Vec<f64>,
}

impl BaseLanguage {
    pub fn new(vocab_size: usize, seed: u64) -> Result<Self> {
        if vocab_size < MIN_VOCAB {
            return Err(Error::Config(format!(
                "vocab_size must be at least {MIN_VOCAB}, got {vocab_size}"
            )));
        }
        let words = word_forms(vocab_size, &mut seed::rng(seed, "base-words", 0), &|_| false);
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (0..vocab_size)
            .map(|r| {
                acc += 1.0 / (r + 1) as f64;
                acc
            })
            .collect();
        for c in &mut cdf {
            *c /= acc;
        }
        Ok(BaseLanguage { words, cdf })
    }

    /// Words ordered from most to least frequent.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    fn sample_global(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c < u).min(self.words.len() - 1)
    }

    fn topic_size(&self) -> usize {
        (self.words.len() / 25).max(8)
    }

    fn sample_topic(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        rand::seq::index::sample(rng, self.words.len(), self.topic_size()).into_vec()
    }

    /// A sentence from a topic: 70% of tokens from the topic's words,
    /// the rest from the global distribution.
    pub fn sample_sentence(&self, topic: &[usize], len_range: &RangeInclusive<usize>, rng: &mut ChaCha8Rng) -> String {
        let len = rng.gen_range(len_range.clone());
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let w = if rng.gen_bool(0.7) {
                topic[rng.gen_range(0..topic.len())]
            } else {
                self.sample_global(rng)
            };
            words.push(self.words[w].as_str());
        }
        words.join(" ")
    }

    /// `n_docs` topical documents. Each document has its own random stream
    /// derived from `(seed, label, index)`.
    pub fn corpus(
        &self,
        label: &str,
        n_docs: usize,
        sents_per_doc: usize,
        len_range: RangeInclusive<usize>,
        seed: u64,
    ) -> Result<BaseCorpus> {
        if len_range.is_empty() || *len_range.start() == 0 {
            return Err(Error::Config(format!("degenerate sentence length range {len_range:?}")));
        }
        if n_docs == 0 || sents_per_doc == 0 {
            return Err(Error::Config(
                "need at least one document and one sentence per document".into(),
            ));
        }
        let docs = (0..n_docs)
            .map(|i| {
                let mut rng = seed::rng(seed, label, i as u64);
                let topic = self.sample_topic(&mut rng);
                let sentences = (0..sents_per_doc)
                    .map(|_| self.sample_sentence(&topic, &len_range, &mut rng))
                    .collect();
                BaseDoc {
                    doc_id: format!("{label}-{i:05}"),
                    topic,
                    sentences,
                }
            })
            .collect();
        Ok(BaseCorpus {
            language: self.clone(),
            docs,
            len_range,
        })
    }
}

/// One base-language document and the topic it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseDoc {
    pub doc_id: String,
    pub topic: Vec<usize>,
    pub sentences: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct BaseCorpus {
    pub language: BaseLanguage,
    pub docs: Vec<BaseDoc>,
    pub len_range: RangeInclusive<usize>,
}

impl BaseCorpus {
    pub fn sample_sentence(&self, doc: &BaseDoc, rng: &mut ChaCha8Rng) -> String {
        self.language.sample_sentence(&doc.topic, &self.len_range, rng)
    }
}

/// Base-language documents over a fresh vocabulary of `vocab_size` words.
pub fn gen_base_corpus(
    vocab_size: usize,
    n_docs: usize,
    sents_per_doc: usize,
    len_range: RangeInclusive<usize>,
    seed: u64,
) -> Result<BaseCorpus> {
    BaseLanguage::new(vocab_size, seed)?.corpus("doc", n_docs, sents_per_doc, len_range, seed)
}

#[cfg(test)]
mod tests;
