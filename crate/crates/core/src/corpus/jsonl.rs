//! JSONL corpus and gold-alignment files.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ComparableCorpus, DocPair, RawSentence};
use crate::{Error, Result};

/// Which shape a corpus file is expected to have.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    Monolingual,
    Comparable,
}

/// A loaded corpus file.
#[derive(Clone, Debug, PartialEq)]
pub enum Loaded {
    Monolingual(Vec<RawSentence>),
    Comparable(ComparableCorpus),
}

/// One gold-parallel sentence pair in a comparable corpus.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GoldPair {
    pub doc_id: String,
    pub src_sent_id: u64,
    pub tgt_sent_id: u64,
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for it in items {
        serde_json::to_writer(&mut w, &it).expect("record serializes");
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates sentence records: non-empty text, unique keys.
pub fn read_sentences(path: &Path) -> Result<Vec<RawSentence>> {
    let records: Vec<RawSentence> = read_lines(path)?;
    let mut seen = HashSet::new();
    for (i, r) in records.iter().enumerate() {
        if r.text.trim().is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "empty text".into(),
            });
        }
        if !seen.insert((r.doc_id.as_str(), r.lang.as_str(), r.sent_id)) {
            return Err(Error::Data(format!(
                "{}: duplicate sentence key (doc_id={}, lang={}, sent_id={})",
                path.display(),
                r.doc_id,
                r.lang,
                r.sent_id
            )));
        }
    }
    if records.is_empty() {
        log::warn!("{}: corpus is empty", path.display());
    }
    Ok(records)
}

pub fn write_sentences<'a>(path: &Path, sentences: impl IntoIterator<Item = &'a RawSentence>) -> Result<()> {
    write_lines(path, sentences)
}

/// Groups sentences into document pairs, in order of first appearance.
///
/// The corpus must contain exactly two languages (none if empty), and every
/// document needs at least one sentence on each side.
pub fn to_comparable(sentences: Vec<RawSentence>) -> Result<ComparableCorpus> {
    let mut langs: Vec<String> = Vec::new();
    for s in &sentences {
        if !langs.contains(&s.lang) {
            langs.push(s.lang.clone());
        }
    }
    if sentences.is_empty() {
        return Ok(ComparableCorpus {
            langs: (String::new(), String::new()),
            doc_pairs: Vec::new(),
        });
    }
    if langs.len() != 2 {
        return Err(Error::Data(format!(
            "comparable corpus needs exactly two languages, found {:?}",
            langs
        )));
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut docs: Vec<DocPair> = Vec::new();
    for s in sentences {
        let i = *index.entry(s.doc_id.clone()).or_insert_with(|| {
            docs.push(DocPair {
                doc_id: s.doc_id.clone(),
                l1: Vec::new(),
                l2: Vec::new(),
            });
            docs.len() - 1
        });
        if s.lang == langs[0] {
            docs[i].l1.push(s);
        } else {
            docs[i].l2.push(s);
        }
    }
    for d in &docs {
        if d.l1.is_empty() || d.l2.is_empty() {
            let missing = if d.l1.is_empty() { &langs[0] } else { &langs[1] };
            return Err(Error::Data(format!(
                "document {} has no sentences in language {missing}",
                d.doc_id
            )));
        }
    }
    let mut it = langs.into_iter();
    Ok(ComparableCorpus {
        langs: (it.next().expect("two"), it.next().expect("two")),
        doc_pairs: docs,
    })
}

/// Loads a corpus file as either schema.
pub fn load_corpus(path: &Path, schema: Schema) -> Result<Loaded> {
    let sentences = read_sentences(path)?;
    Ok(match schema {
        Schema::Monolingual => Loaded::Monolingual(sentences),
        Schema::Comparable => Loaded::Comparable(to_comparable(sentences)?),
    })
}

pub fn load_comparable(path: &Path) -> Result<ComparableCorpus> {
    to_comparable(read_sentences(path)?)
}

pub fn read_gold(path: &Path) -> Result<BTreeSet<GoldPair>> {
    let recs: Vec<GoldPair> = read_lines(path)?;
    Ok(recs.into_iter().collect())
}

pub fn write_gold<'a>(path: &Path, gold: impl IntoIterator<Item = &'a GoldPair>) -> Result<()> {
    write_lines(path, gold)
}
