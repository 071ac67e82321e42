use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{apply_cipher, BaseLanguage, CipherSpec, SCRIPTS};
use crate::corpus::{write_gold, write_sentences, ComparableCorpus, DocPair, GoldPair, RawSentence};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Tiny,
    Low,
    Mid,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Profile::Tiny),
            "low" => Ok(Profile::Low),
            "mid" => Ok(Profile::Mid),
            _ => Err(Error::Config(format!(
                "unknown profile {s:?} (expected tiny, low or mid)"
            ))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Tiny => "tiny",
            Profile::Low => "low",
            Profile::Mid => "mid",
        })
    }
}

/// Size and difficulty knobs of a synthetic suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    pub vocab_size: usize,
    /// Comparable document pairs per language pair.
    pub n_docs: usize,
    pub sents_per_doc: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub parallel_fraction: f64,
    pub swap_window: usize,
    /// Fraction of words a cipher language leaves unchanged.
    pub shared_fraction: f64,
    /// Whether cipher languages are written in another script.
    pub glyphs: bool,
    /// Monolingual sentences per language.
    pub n_mono: usize,
    pub n_dev: usize,
    pub n_test: usize,
}

impl Profile {
    /// Document counts keep roughly the proportions of small, medium and
    /// large comparable collections, shrunk to run on a laptop CPU.
    pub fn params(self) -> ProfileParams {
        let n_docs = match self {
            Profile::Tiny => 2_000,
            Profile::Low => 6_000,
            Profile::Mid => 12_000,
        };
        ProfileParams {
            vocab_size: 300,
            n_docs,
            sents_per_doc: 4,
            len_min: 4,
            len_max: 8,
            parallel_fraction: 0.5,
            swap_window: 1,
            shared_fraction: 0.0,
            glyphs: true,
            n_mono: 4 * n_docs,
            n_dev: 200,
            n_test: 200,
        }
    }
}

/// Everything generated for one language pair.
#[derive(Clone, Debug)]
pub struct PairData {
    pub comparable: ComparableCorpus,
    pub gold: Vec<GoldPair>,
    pub dev: ComparableCorpus,
    pub test: ComparableCorpus,
    /// Word translations in base-frequency order.
    pub lexicon: Vec<(String, String)>,
}

impl PairData {
    pub fn name(&self) -> String {
        format!("{}-{}", self.comparable.langs.0, self.comparable.langs.1)
    }
}

#[derive(Clone, Debug)]
pub struct Suite {
    pub profile: Option<Profile>,
    pub params: ProfileParams,
    pub seed: u64,
    pub langs: Vec<String>,
    pub ciphers: Vec<CipherSpec>,
    pub pairs: Vec<PairData>,
    pub mono: Vec<Vec<RawSentence>>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    profile: Option<Profile>,
    params: &'a ProfileParams,
    seed: u64,
    langs: &'a [String],
    pairs: Vec<String>,
}

pub fn lang_name(i: usize) -> String {
    format!("l{i}")
}

pub fn gen_suite(profile: Profile, n_langs: usize, seed: u64) -> Result<Suite> {
    let mut s = gen_suite_with(&profile.params(), n_langs, seed)?;
    s.profile = Some(profile);
    Ok(s)
}

/// Language `l0` is the base language; every other language is a cipher of
/// it. All `n_langs·(n_langs-1)/2` pairs get their own documents.
pub fn gen_suite_with(params: &ProfileParams, n_langs: usize, seed: u64) -> Result<Suite> {
    if n_langs < 2 {
        return Err(Error::Config(format!("need at least 2 languages, got {n_langs}")));
    }
    let base = BaseLanguage::new(params.vocab_size, seed)?;
    let langs: Vec<String> = (0..n_langs).map(lang_name).collect();
    let pf = params.parallel_fraction;
    let mut ciphers = vec![CipherSpec::identity(base.words(), pf, seed::derive(seed, "lang", 0))];
    for i in 1..n_langs {
        ciphers.push(CipherSpec::random(
            base.words(),
            params.shared_fraction,
            params.glyphs.then_some((i - 1) % SCRIPTS.len()),
            params.swap_window,
            pf,
            seed::derive(seed, "lang", i as u64),
        )?);
    }
    let lens = params.len_min..=params.len_max;

    let mut pairs = Vec::new();
    for a in 0..n_langs {
        for b in a + 1..n_langs {
            let name = format!("{}-{}", langs[a], langs[b]);
            let docs = base.corpus(&name, params.n_docs, params.sents_per_doc, lens.clone(), seed)?;
            let mut doc_pairs = Vec::with_capacity(docs.docs.len());
            let mut gold = Vec::new();
            for doc in &docs.docs {
                let l1 = doc
                    .sentences
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        Ok(RawSentence::new(
                            doc.doc_id.clone(),
                            &langs[a],
                            i as u64,
                            ciphers[a].encipher(s)?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (l2, g) = apply_cipher(&docs, doc, &ciphers[b], &langs[b])?;
                gold.extend(g);
                doc_pairs.push(DocPair {
                    doc_id: doc.doc_id.clone(),
                    l1,
                    l2,
                });
            }
            let held_out = |label: &str, n: usize| -> Result<ComparableCorpus> {
                let c = base.corpus(&format!("{label}-{name}"), n, 1, lens.clone(), seed)?;
                let doc_pairs = c
                    .docs
                    .iter()
                    .map(|d| {
                        Ok(DocPair {
                            doc_id: d.doc_id.clone(),
                            l1: vec![RawSentence::new(
                                d.doc_id.clone(),
                                &langs[a],
                                0,
                                ciphers[a].encipher(&d.sentences[0])?,
                            )],
                            l2: vec![RawSentence::new(
                                d.doc_id.clone(),
                                &langs[b],
                                0,
                                ciphers[b].encipher(&d.sentences[0])?,
                            )],
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ComparableCorpus {
                    langs: (langs[a].clone(), langs[b].clone()),
                    doc_pairs,
                })
            };
            let lexicon = base
                .words()
                .iter()
                .map(|w| Ok((ciphers[a].word(w)?, ciphers[b].word(w)?)))
                .collect::<Result<Vec<_>>>()?;
            pairs.push(PairData {
                comparable: ComparableCorpus {
                    langs: (langs[a].clone(), langs[b].clone()),
                    doc_pairs,
                },
                gold,
                dev: held_out("dev", params.n_dev)?,
                test: held_out("test", params.n_test)?,
                lexicon,
            });
        }
    }

    let per_doc = params.sents_per_doc;
    let mut mono = Vec::new();
    for (i, lang) in langs.iter().enumerate() {
        let n_docs = params.n_mono.div_ceil(per_doc).max(1);
        let c = base.corpus(&format!("mono-{lang}"), n_docs, per_doc, lens.clone(), seed)?;
        let mut sents = Vec::with_capacity(params.n_mono);
        'docs: for d in &c.docs {
            for (j, s) in d.sentences.iter().enumerate() {
                if sents.len() == params.n_mono {
                    break 'docs;
                }
                sents.push(RawSentence::new(
                    d.doc_id.clone(),
                    lang,
                    j as u64,
                    ciphers[i].encipher(s)?,
                ));
            }
        }
        mono.push(sents);
    }

    Ok(Suite {
        profile: None,
        params: params.clone(),
        seed,
        langs,
        ciphers,
        pairs,
        mono,
    })
}

fn comparable_lines(c: &ComparableCorpus) -> impl Iterator<Item = &RawSentence> {
    c.doc_pairs.iter().flat_map(|d| d.l1.iter().chain(&d.l2))
}

impl Suite {
    pub fn pair(&self, a: &str, b: &str) -> Option<&PairData> {
        self.pairs
            .iter()
            .find(|p| p.comparable.langs.0 == a && p.comparable.langs.1 == b)
    }

    pub fn mono(&self, lang: &str) -> Option<&[RawSentence]> {
        self.langs
            .iter()
            .position(|l| l == lang)
            .map(|i| self.mono[i].as_slice())
    }

    /// Writes `comparable/`, `gold/`, `dev/`, `test/`, `lexicon/` (one file
    /// per pair), `mono/` (one file per language) and `manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for sub in ["comparable", "gold", "dev", "test", "lexicon", "mono"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        for p in &self.pairs {
            let file = format!("{}.jsonl", p.name());
            write_sentences(&dir.join("comparable").join(&file), comparable_lines(&p.comparable))?;
            write_gold(&dir.join("gold").join(&file), &p.gold)?;
            write_sentences(&dir.join("dev").join(&file), comparable_lines(&p.dev))?;
            write_sentences(&dir.join("test").join(&file), comparable_lines(&p.test))?;
            let lex = dir.join("lexicon").join(format!("{}.tsv", p.name()));
            let mut f = fs::File::create(&lex).map_err(|e| Error::io(&lex, e))?;
            for (a, b) in &p.lexicon {
                writeln!(f, "{a}\t{b}").map_err(|e| Error::io(&lex, e))?;
            }
        }
        for (lang, sents) in self.langs.iter().zip(&self.mono) {
            write_sentences(&dir.join("mono").join(format!("{lang}.jsonl")), sents)?;
        }
        let manifest = Manifest {
            format: "ssnmt-synth",
            version: 1,
            profile: self.profile,
            params: &self.params,
            seed: self.seed,
            langs: &self.langs,
            pairs: self.pairs.iter().map(PairData::name).collect(),
        };
        let p = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&p, body + "\n").map_err(|e| Error::io(&p, e))
    }
}
