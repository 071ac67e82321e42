//! Corpus data model, JSONL ingestion, BPE, tagging, downsampling and the
//! vocabulary-overlap diagnostic.

mod bpe;
mod jsonl;
mod types;

use std::collections::HashSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use bpe::{tag_name, BpeModel, END_OF_WORD};
pub use jsonl::{
    load_comparable, load_corpus, read_gold, read_sentences, to_comparable, write_gold, write_sentences, GoldPair,
    Loaded, Schema,
};
pub use types::*;

use crate::{Error, Result};

/// Sentences of one document in both languages.
#[derive(Clone, Debug, PartialEq)]
pub struct DocPair {
    pub doc_id: String,
    pub l1: Vec<RawSentence>,
    pub l2: Vec<RawSentence>,
}

/// Topic-aligned document pairs in two languages.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparableCorpus {
    pub langs: (String, String),
    pub doc_pairs: Vec<DocPair>,
}

impl ComparableCorpus {
    pub fn sentences(&self) -> impl Iterator<Item = &RawSentence> {
        self.doc_pairs.iter().flat_map(|d| d.l1.iter().chain(&d.l2))
    }

    pub fn num_sentences(&self) -> (usize, usize) {
        self.doc_pairs
            .iter()
            .fold((0, 0), |(a, b), d| (a + d.l1.len(), b + d.l2.len()))
    }
}

/// Uniform sample of `min(n, len)` sentences without replacement, kept in
/// input order. Deterministic given `seed`.
pub fn downsample(sentences: &[RawSentence], n: usize, seed: u64) -> Vec<RawSentence> {
    if n >= sentences.len() {
        return sentences.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, sentences.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| sentences[i].clone()).collect()
}

/// Percentage of whitespace-token types shared by two corpora:
/// `100 · |V1 ∩ V2| / |V1 ∪ V2|`.
pub fn vocab_overlap<'a>(
    c1: impl IntoIterator<Item = &'a RawSentence>,
    c2: impl IntoIterator<Item = &'a RawSentence>,
) -> Result<f64> {
    let types = |c: &mut dyn Iterator<Item = &'a RawSentence>| -> HashSet<&'a str> {
        c.flat_map(|s| s.text.split_whitespace()).collect()
    };
    let v1 = types(&mut c1.into_iter());
    let v2 = types(&mut c2.into_iter());
    if v1.is_empty() || v2.is_empty() {
        return Err(Error::Data("vocabulary overlap of an empty corpus".into()));
    }
    let inter = v1.intersection(&v2).count();
    let union = v1.union(&v2).count();
    Ok(100.0 * inter as f64 / union as f64)
}
