//! Initialization providers: CBOW embeddings mapped across languages with
//! orthogonal Procrustes, and (multilingual) denoising autoencoding.

mod cbow;
mod dae;
mod procrustes;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cbow::{train_cbow, CbowConfig};
pub use dae::{pretrain_dae, DaeConfig, DaeMode, DaeReport, MonoData};
pub use procrustes::{map_embeddings, procrustes, Mapping};

use crate::corpus::{BpeModel, TokenId};
use crate::nn::Mat;
use crate::{seed, Error, Result};

/// Word vectors for the tokens of one language.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub lang: String,
    /// Token ids covered, one per matrix row.
    pub tokens: Vec<TokenId>,
    /// Corpus frequency of each covered token.
    pub counts: Vec<u64>,
    pub matrix: Mat<f32>,
    /// Hash of the token sequences the vectors were trained on.
    pub fingerprint: String,
}

/// Scales `row` to unit Euclidean length (zero rows stay zero).
pub fn unit_length(row: &mut [f32]) {
    let n = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in row {
            *x = (*x as f64 / n) as f32;
        }
    }
}

/// SHA-256 over token sequences, as lowercase hex.
pub fn fingerprint(sentences: &[Vec<TokenId>]) -> String {
    let mut h = Sha256::new();
    for s in sentences {
        h.update((s.len() as u32).to_le_bytes());
        for t in s {
            h.update(t.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl EmbeddingSet {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row_of(&self, token: TokenId) -> Option<usize> {
        self.tokens.binary_search(&token).ok()
    }

    /// Copy with every row scaled to unit length.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for r in 0..out.matrix.rows() {
            unit_length(out.matrix.row_mut(r));
        }
        out
    }

    /// Header `lang dim count fingerprint`, then `id<TAB>token<TAB>values`.
    pub fn to_text(&self, bpe: &BpeModel) -> String {
        let mut s = format!(
            "{} {} {} {}\n",
            self.lang,
            self.dim(),
            self.tokens.len(),
            self.fingerprint
        );
        for (r, (&t, &c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            let _ = write!(s, "{t}\t{}\t{c}\t", bpe.token(t));
            let vals: Vec<String> = self.matrix.row(r).iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&vals.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::Parse {
            path: "<embeddings>".into(),
            line,
            msg: m.to_string(),
        };
        let mut lines = text.lines();
        let head: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad(1, "missing header"))?
            .split(' ')
            .collect();
        let [lang, dim, count, fp] = head[..] else {
            return Err(bad(1, "header must be `lang dim count fingerprint`"));
        };
        let dim: usize = dim.parse().map_err(|_| bad(1, "bad dim"))?;
        let count: usize = count.parse().map_err(|_| bad(1, "bad count"))?;
        let mut tokens = Vec::with_capacity(count);
        let mut counts = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for (i, line) in lines.enumerate() {
            let ln = i + 2;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(bad(ln, "expected id, token, count and values"));
            }
            tokens.push(parts[0].parse().map_err(|_| bad(ln, "bad id"))?);
            counts.push(parts[2].parse().map_err(|_| bad(ln, "bad count"))?);
            let vals: Vec<f32> = parts[3]
                .split(' ')
                .map(|v| v.parse().map_err(|_| bad(ln, "bad value")))
                .collect::<Result<_>>()?;
            if vals.len() != dim {
                return Err(bad(ln, "wrong number of values"));
            }
            data.extend(vals);
        }
        if tokens.len() != count {
            return Err(bad(0, "row count differs from header"));
        }
        if !tokens.windows(2).all(|w| w[0] < w[1]) {
            return Err(bad(0, "token ids must be strictly increasing"));
        }
        Ok(EmbeddingSet {
            lang: lang.to_string(),
            tokens,
            counts,
            matrix: Mat::from_vec(count, dim, data),
            fingerprint: fp.to_string(),
        })
    }

    pub fn save(&self, path: &Path, bpe: &BpeModel) -> Result<()> {
        fs::write(path, self.to_text(bpe)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            },
            e => e,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LexiconSource {
    Numbers,
    SwadeshLike,
    CipherGoldSample,
}

/// Seed translation pairs for Procrustes.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedLexicon {
    pub entries: Vec<(TokenId, TokenId)>,
    pub source: LexiconSource,
}

impl SeedLexicon {
    pub fn new(entries: Vec<(TokenId, TokenId)>, source: LexiconSource) -> Result<Self> {
        let mut seen = HashSet::new();
        for (s, _) in &entries {
            if !seen.insert(*s) {
                return Err(Error::Data(format!("seed lexicon repeats source token {s}")));
            }
        }
        Ok(SeedLexicon { entries, source })
    }

    /// The first `n` word pairs that are single BPE tokens on both sides
    /// (pairs are taken in the given order, skipping repeated sources).
    pub fn from_word_pairs(bpe: &BpeModel, pairs: &[(String, String)], n: usize) -> Self {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for (a, b) in pairs {
            if entries.len() == n {
                break;
            }
            let (ta, tb) = (bpe.apply(a), bpe.apply(b));
            if let ([x], [y]) = (ta.as_slice(), tb.as_slice()) {
                if !bpe.is_reserved(*x) && !bpe.is_reserved(*y) && seen.insert(*x) {
                    entries.push((*x, *y));
                }
            }
        }
        SeedLexicon {
            entries,
            source: LexiconSource::CipherGoldSample,
        }
    }

    /// Two-column TSV of token strings.
    pub fn to_tsv(&self, bpe: &BpeModel) -> String {
        self.entries
            .iter()
            .map(|(a, b)| format!("{}\t{}\n", bpe.token(*a), bpe.token(*b)))
            .collect()
    }

    pub fn from_tsv(text: &str, bpe: &BpeModel, source: LexiconSource) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Data(format!("lexicon line {}: expected two columns", i + 1)));
            };
            let look = |t: &str| {
                bpe.id_of(t)
                    .ok_or_else(|| Error::Data(format!("lexicon line {}: token {t:?} not in vocabulary", i + 1)))
            };
            entries.push((look(a)?, look(b)?));
        }
        Self::new(entries, source)
    }
}

/// Outcome of [`build_we_init`].
#[derive(Clone, Debug, PartialEq)]
pub struct WeReport {
    /// Tokens that received a pretrained vector.
    pub assigned: usize,
    pub vocab_size: usize,
    /// Non-special tokens left at random initialization.
    pub random_rows: Vec<TokenId>,
}

impl WeReport {
    pub fn coverage(&self) -> f64 {
        self.assigned as f64 / self.vocab_size as f64
    }
}

/// Embedding table for a model: each token takes its (unit-length) vector
/// from the set in which it is most frequent; other rows, specials included,
/// are drawn like a fresh model's embedding rows.
pub fn build_we_init(
    sets: &[&EmbeddingSet],
    vocab_size: usize,
    d_model: usize,
    first_content_id: TokenId,
    seed_value: u64,
) -> Result<(Mat<f32>, WeReport)> {
    for s in sets {
        if s.dim() != d_model {
            return Err(Error::Shape(format!(
                "embeddings for {} have dim {} but the model needs {d_model}",
                s.lang,
                s.dim()
            )));
        }
    }
    let mut rng: ChaCha8Rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, "we-init", 0));
    let normal = Normal::new(0.0, 1.0 / (d_model as f64).sqrt()).expect("valid std");
    let mut m = Mat::from_fn(vocab_size, d_model, |_, _| normal.sample(&mut rng) as f32);
    let mut report = WeReport {
        assigned: 0,
        vocab_size,
        random_rows: Vec::new(),
    };
    for t in first_content_id..vocab_size as TokenId {
        let best = sets
            .iter()
            .filter_map(|s| s.row_of(t).map(|r| (s.counts[r], *s, r)))
            .max_by_key(|(c, _, _)| *c);
        match best {
            Some((_, s, r)) => {
                let row = m.row_mut(t as usize);
                row.copy_from_slice(s.matrix.row(r));
                unit_length(row);
                report.assigned += 1;
            }
            None => report.random_rows.push(t),
        }
    }
    Ok((m, report))
}

#[cfg(test)]
mod tests;
