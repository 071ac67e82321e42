use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{word_forms, BaseCorpus, BaseDoc};
use crate::corpus::{GoldPair, RawSentence};
use crate::{seed, Error, Result};

/// First code points of the scripts glyph maps can target (Greek, Cyrillic,
/// Armenian, Georgian). Each block has at least 26 letters.
pub const SCRIPTS: [u32; 4] = [0x3B1, 0x430, 0x561, 0x10D0];
pub const MAX_SWAP_WINDOW: usize = 3;

/// How a cipher language is derived from the base language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CipherSpec {
    pub lexicon_map: BTreeMap<String, String>,
    pub glyph_map: Option<BTreeMap<char, char>>,
    pub swap_window: usize,
    pub parallel_fraction: f64,
    pub seed: u64,
}

/// Reverses consecutive blocks of `window + 1` items, so no item moves more
/// than `window` positions. The operation is its own inverse.
pub fn reorder<T>(items: &mut [T], window: usize) {
    for block in items.chunks_mut(window + 1) {
        block.reverse();
    }
}

impl CipherSpec {
    /// The base language itself.
    pub fn identity(words: &[String], parallel_fraction: f64, seed: u64) -> Self {
        CipherSpec {
            lexicon_map: words.iter().map(|w| (w.clone(), w.clone())).collect(),
            glyph_map: None,
            swap_window: 0,
            parallel_fraction,
            seed,
        }
    }

    /// A random cipher over `words`. A `shared_fraction` of words keep their
    /// form; `script` selects a target block from [`SCRIPTS`].
    pub fn random(
        words: &[String],
        shared_fraction: f64,
        script: Option<usize>,
        swap_window: usize,
        parallel_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&shared_fraction) {
            return Err(Error::Config(format!(
                "shared_fraction {shared_fraction} outside [0, 1]"
            )));
        }
        let mut rng = seed::rng(seed, "cipher", 0);
        let n_shared = (shared_fraction * words.len() as f64).round() as usize;
        let shared: HashSet<usize> = rand::seq::index::sample(&mut rng, words.len(), n_shared)
            .into_iter()
            .collect();
        let base: HashSet<&str> = words.iter().map(String::as_str).collect();
        let mut fresh = word_forms(words.len() - n_shared, &mut rng, &|w| base.contains(w)).into_iter();
        let lexicon_map = words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let t = if shared.contains(&i) {
                    w.clone()
                } else {
                    fresh.next().unwrap()
                };
                (w.clone(), t)
            })
            .collect();
        let glyph_map = match script {
            None => None,
            Some(s) => {
                let start = *SCRIPTS
                    .get(s)
                    .ok_or_else(|| Error::Config(format!("no script with index {s}")))?;
                let mut perm: Vec<u32> = (0..26).collect();
                perm.shuffle(&mut rng);
                Some(
                    (b'a'..=b'z')
                        .zip(perm)
                        .map(|(c, p)| (c as char, char::from_u32(start + p).unwrap()))
                        .collect(),
                )
            }
        };
        let spec = CipherSpec {
            lexicon_map,
            glyph_map,
            swap_window,
            parallel_fraction,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let image: HashSet<&String> = self.lexicon_map.values().collect();
        if image.len() != self.lexicon_map.len() {
            return Err(Error::Config("lexicon map is not injective".into()));
        }
        if let Some(g) = &self.glyph_map {
            let image: HashSet<&char> = g.values().collect();
            if image.len() != g.len() {
                return Err(Error::Config("glyph map is not injective".into()));
            }
        }
        if self.swap_window > MAX_SWAP_WINDOW {
            return Err(Error::Config(format!(
                "swap_window {} exceeds {MAX_SWAP_WINDOW}",
                self.swap_window
            )));
        }
        if !(0.0..=1.0).contains(&self.parallel_fraction) {
            return Err(Error::Config(format!(
                "parallel_fraction {} outside [0, 1]",
                self.parallel_fraction
            )));
        }
        Ok(())
    }

    fn glyphs(&self, w: &str) -> String {
        match &self.glyph_map {
            None => w.to_string(),
            Some(g) => w.chars().map(|c| *g.get(&c).unwrap_or(&c)).collect(),
        }
    }

    /// Lexicon and glyph map for a single word.
    pub fn word(&self, w: &str) -> Result<String> {
        let t = self
            .lexicon_map
            .get(w)
            .ok_or_else(|| Error::Data(format!("unmapped word {w:?}")))?;
        Ok(self.glyphs(t))
    }

    pub fn encipher(&self, text: &str) -> Result<String> {
        let mut words = text
            .split_whitespace()
            .map(|w| self.word(w))
            .collect::<Result<Vec<_>>>()?;
        reorder(&mut words, self.swap_window);
        Ok(words.join(" "))
    }

    /// Exact inverse of [`encipher`](Self::encipher).
    pub fn decipher(&self, text: &str) -> Result<String> {
        let inv_glyph: Option<BTreeMap<char, char>> = self
            .glyph_map
            .as_ref()
            .map(|g| g.iter().map(|(a, b)| (*b, *a)).collect());
        let inv_lex: BTreeMap<&str, &str> = self.lexicon_map.iter().map(|(a, b)| (b.as_str(), a.as_str())).collect();
        let mut words = text
            .split_whitespace()
            .map(|w| {
                let plain: String = match &inv_glyph {
                    None => w.to_string(),
                    Some(g) => w.chars().map(|c| *g.get(&c).unwrap_or(&c)).collect(),
                };
                inv_lex
                    .get(plain.as_str())
                    .map(|s| s.to_string())
                    .ok_or_else(|| Error::Data(format!("word {w:?} is not in the cipher's image")))
            })
            .collect::<Result<Vec<_>>>()?;
        reorder(&mut words, self.swap_window);
        Ok(words.join(" "))
    }
}

/// Ciphers one document into language `lang`.
///
/// Each sentence independently stays parallel with probability
/// `parallel_fraction`; the others are replaced by fresh sentences from the
/// document's topic. Parallel sentences keep their position, so the gold
/// alignment is a subset of the diagonal.
pub fn apply_cipher(
    corpus: &BaseCorpus,
    doc: &BaseDoc,
    spec: &CipherSpec,
    lang: &str,
) -> Result<(Vec<RawSentence>, Vec<GoldPair>)> {
    let mut rng = seed::rng(spec.seed, &doc.doc_id, 1);
    let mut out = Vec::with_capacity(doc.sentences.len());
    let mut gold = Vec::new();
    for (i, s) in doc.sentences.iter().enumerate() {
        let text = if rng.gen_bool(spec.parallel_fraction) {
            gold.push(GoldPair {
                doc_id: doc.doc_id.clone(),
                src_sent_id: i as u64,
                tgt_sent_id: i as u64,
            });
            spec.encipher(s)?
        } else {
            spec.encipher(&corpus.sample_sentence(doc, &mut rng))?
        };
        out.push(RawSentence::new(doc.doc_id.clone(), lang, i as u64, text));
    }
    Ok((out, gold))
}
