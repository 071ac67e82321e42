//! Byte-pair encoding over whitespace-separated words.
//!
//! Words are split into characters, the last one carrying a word-final
//! marker (`</w>` in the text form). Merges are learned greedily by pair
//! frequency with an exact recount after every merge; ties go to the
//! lexicographically smallest pair.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{special, RawSentence, TaggedSentence, TokenId};
use crate::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
const FORMAT: &str = "ssnmt-bpe";
const VERSION: u32 = 1;

/// A symbol: surface text plus whether it ends a word.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Sym {
    text: String,
    last: bool,
}

impl Sym {
    fn display(&self) -> String {
        if self.last {
            format!("{}{END_OF_WORD}", self.text)
        } else {
            self.text.clone()
        }
    }

    fn parse(s: &str) -> Sym {
        match s.strip_suffix(END_OF_WORD) {
            Some(t) if !t.is_empty() => Sym {
                text: t.to_string(),
                last: true,
            },
            _ => Sym {
                text: s.to_string(),
                last: false,
            },
        }
    }

    fn join(&self, right: &Sym) -> Sym {
        Sym {
            text: format!("{}{}", self.text, right.text),
            last: right.last,
        }
    }
}

fn word_symbols(word: &str) -> Vec<Sym> {
    let n = word.chars().count();
    word.chars()
        .enumerate()
        .map(|(i, c)| Sym {
            text: c.to_string(),
            last: i + 1 == n,
        })
        .collect()
}

/// A trained BPE model and its vocabulary.
///
/// Ids: specials first, then one tag per language, then every alphabet
/// character in word-internal and word-final form, then merged symbols in
/// merge order.
#[derive(Clone, Debug)]
pub struct BpeModel {
    langs: Vec<String>,
    alphabet: Vec<char>,
    merges: Vec<(Sym, Sym)>,
    vocab: Vec<Sym>,
    names: Vec<String>,
    index: HashMap<Sym, TokenId>,
    ranks: HashMap<(Sym, Sym), usize>,
}

impl PartialEq for BpeModel {
    fn eq(&self, other: &Self) -> bool {
        self.langs == other.langs && self.alphabet == other.alphabet && self.merges == other.merges
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    specials: Vec<String>,
    langs: Vec<String>,
    alphabet: String,
}

pub fn tag_name(lang: &str) -> String {
    format!("<lang:{lang}>")
}

impl BpeModel {
    fn build(langs: Vec<String>, alphabet: Vec<char>, merges: Vec<(Sym, Sym)>) -> Self {
        let mut names: Vec<String> = special::NAMES.iter().map(|s| s.to_string()).collect();
        let mut vocab: Vec<Sym> = names
            .iter()
            .map(|n| Sym {
                text: n.clone(),
                last: false,
            })
            .collect();
        for l in &langs {
            names.push(tag_name(l));
            vocab.push(Sym {
                text: tag_name(l),
                last: false,
            });
        }
        let mut index = HashMap::new();
        let first_symbol = vocab.len();
        let mut push = |s: Sym, vocab: &mut Vec<Sym>, names: &mut Vec<String>| {
            if !index.contains_key(&s) {
                index.insert(s.clone(), vocab.len() as TokenId);
                names.push(s.display());
                vocab.push(s);
            }
        };
        for &c in &alphabet {
            for last in [false, true] {
                push(
                    Sym {
                        text: c.to_string(),
                        last,
                    },
                    &mut vocab,
                    &mut names,
                );
            }
        }
        for (a, b) in &merges {
            push(a.join(b), &mut vocab, &mut names);
        }
        debug_assert!(vocab.len() >= first_symbol);
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, (a, b))| ((a.clone(), b.clone()), i))
            .collect();
        BpeModel {
            langs,
            alphabet,
            merges,
            vocab,
            names,
            index,
            ranks,
        }
    }

    /// Learns up to `num_merges` merges over all sentences (joint vocabulary
    /// for every language present).
    pub fn train(sentences: &[RawSentence], num_merges: usize) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Data("cannot train BPE on an empty corpus".into()));
        }
        let langs: BTreeSet<String> = sentences.iter().map(|s| s.lang.clone()).collect();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut alphabet = BTreeSet::new();
        for s in sentences {
            for w in s.text.split_whitespace() {
                *counts.entry(w).or_default() += 1;
                alphabet.extend(w.chars());
            }
        }
        let mut words: Vec<(Vec<Sym>, usize)> = counts.into_iter().map(|(w, c)| (word_symbols(w), c)).collect();

        let mut merges = Vec::new();
        while merges.len() < num_merges {
            let mut pairs: HashMap<(&Sym, &Sym), usize> = HashMap::new();
            for (syms, c) in &words {
                for w in syms.windows(2) {
                    *pairs.entry((&w[0], &w[1])).or_default() += c;
                }
            }
            let best = pairs
                .into_iter()
                .map(|((a, b), c)| (c, a.display(), b.display(), a, b))
                .max_by(|x, y| x.0.cmp(&y.0).then_with(|| (&y.1, &y.2).cmp(&(&x.1, &x.2))));
            let Some((_, _, _, a, b)) = best else { break };
            let (a, b) = (a.clone(), b.clone());
            let joined = a.join(&b);
            for (syms, _) in words.iter_mut() {
                apply_merge(syms, &a, &b, &joined);
            }
            merges.push((a, b));
        }
        Ok(Self::build(
            langs.into_iter().collect(),
            alphabet.into_iter().collect(),
            merges,
        ))
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn langs(&self) -> &[String] {
        &self.langs
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    /// Merges in learned order, in text form.
    pub fn merges(&self) -> Vec<(String, String)> {
        self.merges.iter().map(|(a, b)| (a.display(), b.display())).collect()
    }

    /// Text form of a token id.
    pub fn token(&self, id: TokenId) -> &str {
        self.names.get(id as usize).map_or(special::NAMES[3], String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        if let Some(i) = self.names.iter().position(|n| n == token) {
            if (i as TokenId) < self.first_symbol_id() {
                return Some(i as TokenId);
            }
        }
        self.index.get(&Sym::parse(token)).copied()
    }

    fn first_symbol_id(&self) -> TokenId {
        (special::COUNT + self.langs.len()) as TokenId
    }

    /// True for specials and language tags.
    pub fn is_reserved(&self, id: TokenId) -> bool {
        id < self.first_symbol_id()
    }

    pub fn tag_id(&self, lang: &str) -> Result<TokenId> {
        self.langs
            .iter()
            .position(|l| l == lang)
            .map(|i| (special::COUNT + i) as TokenId)
            .ok_or_else(|| Error::Data(format!("unknown language tag {lang:?}")))
    }

    fn segment_word(&self, word: &str, out: &mut Vec<TokenId>) -> bool {
        let mut syms = word_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w)))
                .min_by_key(|(r, _)| *r)
                .map(|(_, w)| (w[0].clone(), w[1].clone()));
            let Some((a, b)) = best else { break };
            let joined = a.join(&b);
            apply_merge(&mut syms, &a, &b, &joined);
        }
        let mut lossless = true;
        for s in &syms {
            match self.index.get(s) {
                Some(&id) => out.push(id),
                None => {
                    lossless = false;
                    out.push(special::UNK);
                }
            }
        }
        lossless
    }

    /// Segments `text`; returns the ids and whether decoding will reproduce
    /// the (whitespace-normalized) input exactly.
    pub fn encode_checked(&self, text: &str) -> (Vec<TokenId>, bool) {
        let mut ids = Vec::new();
        let mut lossless = true;
        for w in text.split_whitespace() {
            lossless &= self.segment_word(w, &mut ids);
        }
        (ids, lossless)
    }

    /// Segments `text`; out-of-alphabet characters become UNK.
    pub fn apply(&self, text: &str) -> Vec<TokenId> {
        self.encode_checked(text).0
    }

    /// Inverse of [`apply`](Self::apply): words joined by single spaces.
    /// Specials other than UNK and language tags are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut pending_space = false;
        for &id in ids {
            if id == special::UNK {
                if pending_space {
                    out.push(' ');
                }
                out.push_str(special::NAMES[special::UNK as usize]);
                pending_space = false;
                continue;
            }
            if self.is_reserved(id) {
                continue;
            }
            let Some(sym) = self.vocab.get(id as usize) else {
                continue;
            };
            if pending_space {
                out.push(' ');
            }
            out.push_str(&sym.text);
            pending_space = sym.last;
        }
        out
    }

    /// Splits an id sequence into words (each list ends with a word-final
    /// symbol, except possibly the last).
    pub fn is_word_final(&self, id: TokenId) -> bool {
        self.vocab.get(id as usize).is_some_and(|s| s.last) && !self.is_reserved(id)
    }

    /// `[src_tag, tgt_tag] ++ tokens`.
    pub fn tag(&self, tokens: &[TokenId], src: &str, tgt: &str) -> Result<TaggedSentence> {
        Ok(TaggedSentence {
            tokens: tokens.to_vec(),
            src_tag: self.tag_id(src)?,
            tgt_tag: self.tag_id(tgt)?,
            origin: None,
        })
    }

    pub fn to_text(&self) -> String {
        let header = Header {
            specials: special::NAMES.iter().map(|s| s.to_string()).collect(),
            langs: self.langs.clone(),
            alphabet: self.alphabet.iter().collect(),
        };
        let mut s = format!(
            "{FORMAT}\t{VERSION}\t{}\n",
            serde_json::to_string(&header).expect("header serializes")
        );
        for (a, b) in &self.merges {
            let _ = writeln!(s, "{} {}", a.display(), b.display());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |m: String| Error::Data(format!("BPE model: {m}"));
        let head = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let mut parts = head.splitn(3, '\t');
        if parts.next() != Some(FORMAT) {
            return Err(bad("missing format header".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing version".into()))?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let header: Header =
            serde_json::from_str(parts.next().unwrap_or("")).map_err(|e| bad(format!("header: {e}")))?;
        if header.specials != special::NAMES {
            return Err(bad("special tokens differ from this build".into()));
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut it = line.split(' ');
            match (it.next(), it.next(), it.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((Sym::parse(a), Sym::parse(b)))
                }
                _ => return Err(bad(format!("line {}: expected two symbols", i + 2))),
            }
        }
        Ok(Self::build(header.langs, header.alphabet.chars().collect(), merges))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn apply_merge(syms: &mut Vec<Sym>, a: &Sym, b: &Sym, joined: &Sym) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if &syms[i] == a && &syms[i + 1] == b {
            syms[i] = joined.clone();
            syms.remove(i + 1);
        }
        i += 1;
    }
}
