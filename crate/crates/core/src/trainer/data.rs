use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{BpeModel, ComparableCorpus, RawSentence, TokenId};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TokSentence {
    pub sent_id: u64,
    pub tokens: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokDoc {
    pub doc_id: String,
    pub l1: Vec<TokSentence>,
    pub l2: Vec<TokSentence>,
}

/// Sentence-aligned evaluation data for one language pair, tokenized and as
/// raw text (the BLEU references).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParallelSet {
    pub l1: Vec<Vec<TokenId>>,
    pub l2: Vec<Vec<TokenId>>,
    pub l1_text: Vec<String>,
    pub l2_text: Vec<String>,
}

impl ParallelSet {
    /// Pairs the sentences of each document by position.
    pub fn from_corpus(bpe: &BpeModel, corpus: &ComparableCorpus) -> Result<Self> {
        let mut out = ParallelSet::default();
        for d in &corpus.doc_pairs {
            if d.l1.len() != d.l2.len() {
                return Err(Error::Data(format!(
                    "evaluation document {} has {} and {} sentences",
                    d.doc_id,
                    d.l1.len(),
                    d.l2.len()
                )));
            }
            for (a, b) in d.l1.iter().zip(&d.l2) {
                out.l1.push(bpe.apply(&a.text));
                out.l2.push(bpe.apply(&b.text));
                out.l1_text.push(a.text.clone());
                out.l2_text.push(b.text.clone());
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.l1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l1.is_empty()
    }

    /// Sources and reference texts for one direction.
    pub fn side(&self, forward: bool) -> (&[Vec<TokenId>], &[String]) {
        if forward {
            (&self.l1, &self.l2_text)
        } else {
            (&self.l2, &self.l1_text)
        }
    }
}

/// Comparable documents of one language pair plus its dev set.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTask {
    pub langs: (String, String),
    pub tags: (TokenId, TokenId),
    pub docs: Vec<TokDoc>,
    pub dev: ParallelSet,
}

fn tokenize(bpe: &BpeModel, sents: &[RawSentence]) -> Vec<TokSentence> {
    sents
        .iter()
        .map(|s| TokSentence {
            sent_id: s.sent_id,
            tokens: bpe.apply(&s.text),
        })
        .collect()
}

impl PairTask {
    pub fn new(bpe: &BpeModel, comparable: &ComparableCorpus, dev: &ComparableCorpus) -> Result<Self> {
        let (a, b) = comparable.langs.clone();
        if dev.langs != comparable.langs {
            return Err(Error::Data(format!(
                "dev set is {}-{} but the corpus is {a}-{b}",
                dev.langs.0, dev.langs.1
            )));
        }
        let tags = (bpe.tag_id(&a)?, bpe.tag_id(&b)?);
        let docs = comparable
            .doc_pairs
            .iter()
            .map(|d| TokDoc {
                doc_id: d.doc_id.clone(),
                l1: tokenize(bpe, &d.l1),
                l2: tokenize(bpe, &d.l2),
            })
            .collect();
        Ok(PairTask {
            langs: (a, b),
            tags,
            docs,
            dev: ParallelSet::from_corpus(bpe, dev)?,
        })
    }

    pub fn name(&self) -> String {
        format!("{}-{}", self.langs.0, self.langs.1)
    }
}

/// Everything the training loop reads: one task per language pair and, per
/// language, the tokens word translation may produce.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainData {
    pub pairs: Vec<PairTask>,
    pub vocab: BTreeMap<String, Vec<TokenId>>,
}

impl TrainData {
    /// The word-translation vocabulary of a language is every non-reserved
    /// token attested in its monolingual data or its comparable sentences.
    pub fn new(bpe: &BpeModel, pairs: Vec<PairTask>, mono: &[RawSentence]) -> Result<Self> {
        let mut vocab: BTreeMap<String, BTreeSet<TokenId>> = BTreeMap::new();
        for s in mono {
            vocab.entry(s.lang.clone()).or_default().extend(bpe.apply(&s.text));
        }
        for p in &pairs {
            for d in &p.docs {
                for (lang, side) in [(&p.langs.0, &d.l1), (&p.langs.1, &d.l2)] {
                    let set = vocab.entry(lang.clone()).or_default();
                    for s in side {
                        set.extend(&s.tokens);
                    }
                }
            }
        }
        let vocab = vocab
            .into_iter()
            .map(|(l, set)| (l, set.into_iter().filter(|&t| !bpe.is_reserved(t)).collect()))
            .collect();
        Ok(TrainData { pairs, vocab })
    }

    pub fn languages(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.pairs.iter().flat_map(|p| [&p.langs.0, &p.langs.1]).collect();
        set.into_iter().cloned().collect()
    }

    /// Training directions: `a-b` then `b-a` for every pair, in pair order.
    pub fn directions(&self) -> Vec<String> {
        self.pairs
            .iter()
            .flat_map(|p| {
                [
                    format!("{}-{}", p.langs.0, p.langs.1),
                    format!("{}-{}", p.langs.1, p.langs.0),
                ]
            })
            .collect()
    }

    /// Only the task for the pair `{a, b}` (in either order).
    pub fn restrict(&self, a: &str, b: &str) -> Result<TrainData> {
        let p = self
            .pairs
            .iter()
            .find(|p| (p.langs.0 == a && p.langs.1 == b) || (p.langs.0 == b && p.langs.1 == a))
            .ok_or_else(|| Error::Data(format!("no corpus for the pair {a}-{b}")))?;
        Ok(TrainData {
            pairs: vec![p.clone()],
            vocab: self.vocab.clone(),
        })
    }

    pub fn num_docs(&self) -> usize {
        self.pairs.iter().map(|p| p.docs.len()).sum()
    }

    /// `(pair, doc)` indices, round-robin over pairs.
    pub fn schedule(&self) -> Vec<(usize, usize)> {
        let longest = self.pairs.iter().map(|p| p.docs.len()).max().unwrap_or(0);
        (0..longest)
            .flat_map(|i| {
                (0..self.pairs.len())
                    .filter(move |&p| i < self.pairs[p].docs.len())
                    .map(move |p| (p, i))
            })
            .collect()
    }
}
