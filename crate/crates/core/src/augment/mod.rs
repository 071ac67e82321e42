//! Synthetic training data: filtered back-translation, word-translation,
//! source noising and BART-style noise for denoising pretraining.

mod noise;

use serde::{Deserialize, Serialize};

pub use noise::{add_noise, add_noise_with, bart_noise, bart_noise_with, BartNoiseConfig, BartNoised, NoiseConfig};

use crate::corpus::{TaggedSentence, TokenId};
use crate::model::{Model, TrainPair};
use crate::nn::{Mat, Scalar};
use crate::scoring::{represent_many, select, AcceptanceDecision, MarginConfig};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "SPE")]
    Spe,
    #[serde(rename = "BT")]
    Bt,
    #[serde(rename = "WT")]
    Wt,
    #[serde(rename = "N-of-SPE")]
    NoisedSpe,
    #[serde(rename = "N-of-BT")]
    NoisedBt,
    #[serde(rename = "N-of-WT")]
    NoisedWt,
}

impl Provenance {
    pub const ALL: [Provenance; 6] = [
        Provenance::Spe,
        Provenance::Bt,
        Provenance::Wt,
        Provenance::NoisedSpe,
        Provenance::NoisedBt,
        Provenance::NoisedWt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Provenance::Spe => "SPE",
            Provenance::Bt => "BT",
            Provenance::Wt => "WT",
            Provenance::NoisedSpe => "N-of-SPE",
            Provenance::NoisedBt => "N-of-BT",
            Provenance::NoisedWt => "N-of-WT",
        }
    }

    /// Provenance of a noised copy.
    pub fn noised(self) -> Provenance {
        match self {
            Provenance::Spe | Provenance::NoisedSpe => Provenance::NoisedSpe,
            Provenance::Bt | Provenance::NoisedBt => Provenance::NoisedBt,
            Provenance::Wt | Provenance::NoisedWt => Provenance::NoisedWt,
        }
    }
}

/// A training pair and where it came from. `tgt` is always real corpus text.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub src: TaggedSentence,
    pub tgt: Vec<TokenId>,
    pub provenance: Provenance,
}

impl SyntheticPair {
    pub fn to_train(&self) -> TrainPair {
        TrainPair {
            src: self.src.clone(),
            tgt: self.tgt.clone(),
        }
    }
}

/// Result of filtered back-translation.
#[derive(Clone, Debug, Default)]
pub struct BtResult {
    pub accepted: Vec<SyntheticPair>,
    /// Indices into the `rejected` input that were not accepted.
    pub still_rejected: Vec<usize>,
    pub decisions: Vec<AcceptanceDecision>,
    pub translations: Vec<Vec<TokenId>>,
}

/// Longest output requested from the decoder when back-translating a
/// sentence of `len` content tokens.
pub fn bt_cap(len: usize, max_len: usize) -> usize {
    (2 * len + 5).min(max_len.saturating_sub(2)).max(1)
}

/// Back-translates `rejected` (tagged for the forward direction) and keeps
/// the pairs that pass mutual-argmax filtering.
///
/// The candidate pool on the other side is `others` (the document's
/// original opposite-language sentences, tagged in their own direction)
/// together with all the back-translations. A pair `(s, bt(s))` is accepted
/// iff it is selected by the same dual-representation rule as extraction.
/// Accepted pairs are returned in the synthetic→clean direction.
pub fn backtranslate<T: Scalar>(
    model: &Model<T>,
    rejected: &[&TaggedSentence],
    others: &[&TaggedSentence],
    cfg: &MarginConfig,
) -> Result<BtResult> {
    if rejected.is_empty() {
        return Ok(BtResult::default());
    }
    let max_len = model.config().max_len;
    let mut translations = Vec::with_capacity(rejected.len());
    // Group by output cap so each decoder call shares one limit.
    for chunk in rejected.chunks(64) {
        let cap = chunk.iter().map(|s| bt_cap(s.tokens.len(), max_len)).max().unwrap_or(1);
        let owned: Vec<TaggedSentence> = chunk.iter().map(|s| (*s).clone()).collect();
        let out = model.translate_batch(&owned, cap)?;
        for (s, mut t) in chunk.iter().zip(out) {
            t.truncate(bt_cap(s.tokens.len(), max_len));
            translations.push(t);
        }
    }
    let synthetic: Vec<TaggedSentence> = rejected
        .iter()
        .zip(&translations)
        .map(|(s, t)| TaggedSentence {
            tokens: t.clone(),
            src_tag: s.tgt_tag,
            tgt_tag: s.src_tag,
            origin: None,
        })
        .collect();

    let pool: Vec<&TaggedSentence> = others.iter().copied().chain(synthetic.iter()).collect();
    let left = represent_many(model, rejected)?;
    let right = represent_many(model, &pool)?;
    let ext = select(&left, &right, cfg)?;

    let mut out = BtResult {
        translations,
        ..Default::default()
    };
    let mut accepted = vec![false; rejected.len()];
    for d in &ext.accepted {
        // Only the pair of a sentence with its own back-translation counts.
        if d.tgt == others.len() + d.src && !synthetic[d.src].tokens.is_empty() {
            accepted[d.src] = true;
            out.accepted.push(SyntheticPair {
                src: synthetic[d.src].clone(),
                tgt: rejected[d.src].tokens.clone(),
                provenance: Provenance::Bt,
            });
        }
    }
    out.still_rejected = (0..rejected.len()).filter(|&i| !accepted[i]).collect();
    out.decisions = ext.decisions;
    Ok(out)
}

/// Nearest-neighbour word translation restricted to a target vocabulary.
#[derive(Clone, Debug)]
pub struct WordTranslator {
    vocab: Vec<TokenId>,
    /// Unit-normalized target rows, one per `vocab` entry.
    targets: Mat<f32>,
    /// Unit-normalized rows of the full table.
    table: Mat<f32>,
}

fn normalized<T: Scalar>(m: &Mat<T>, rows: impl Iterator<Item = usize>) -> Mat<f32> {
    let rows: Vec<usize> = rows.collect();
    let mut out = Mat::zeros(rows.len(), m.cols());
    for (k, &r) in rows.iter().enumerate() {
        let src = m.row(r);
        let norm = src.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (o, x) in out.row_mut(k).iter_mut().zip(src) {
                *o = (x.as_f64() / norm) as f32;
            }
        }
    }
    out
}

impl WordTranslator {
    /// `target_vocab` is deduplicated and sorted so ties resolve to the
    /// lowest id.
    pub fn new<T: Scalar>(embeddings: &Mat<T>, target_vocab: &[TokenId]) -> Result<Self> {
        let mut vocab = target_vocab.to_vec();
        vocab.sort_unstable();
        vocab.dedup();
        if vocab.is_empty() {
            return Err(crate::Error::Data(
                "word translation needs a non-empty target vocabulary".into(),
            ));
        }
        if let Some(&bad) = vocab.iter().find(|&&t| t as usize >= embeddings.rows()) {
            return Err(crate::Error::Data(format!(
                "target token {bad} outside the embedding table"
            )));
        }
        Ok(WordTranslator {
            targets: normalized(embeddings, vocab.iter().map(|&t| t as usize)),
            table: normalized(embeddings, 0..embeddings.rows()),
            vocab,
        })
    }

    pub fn translate_tokens(&self, tokens: &[TokenId]) -> Vec<TokenId> {
        if tokens.is_empty() {
            return Vec::new();
        }
        let d = self.table.cols();
        let mut q = Mat::zeros(tokens.len(), d);
        for (i, &t) in tokens.iter().enumerate() {
            if (t as usize) < self.table.rows() {
                q.row_mut(i).copy_from_slice(self.table.row(t as usize));
            }
        }
        let sims = crate::nn::matmul(q.view(), self.targets.view().t());
        (0..tokens.len())
            .map(|i| self.vocab[crate::nn::argmax(sims.row(i))])
            .collect()
    }

    /// WT pair for a sentence tagged in the forward direction: the
    /// word-translated copy becomes the source of the reverse direction.
    pub fn word_translate(&self, sentence: &TaggedSentence) -> SyntheticPair {
        SyntheticPair {
            src: TaggedSentence {
                tokens: self.translate_tokens(&sentence.tokens),
                src_tag: sentence.tgt_tag,
                tgt_tag: sentence.src_tag,
                origin: sentence.origin.clone(),
            },
            tgt: sentence.tokens.clone(),
            provenance: Provenance::Wt,
        }
    }
}

/// One-shot form of [`WordTranslator::word_translate`].
pub fn word_translate<T: Scalar>(
    model: &Model<T>,
    sentence: &TaggedSentence,
    target_vocab: &[TokenId],
) -> Result<SyntheticPair> {
    Ok(WordTranslator::new(model.embeddings(), target_vocab)?.word_translate(sentence))
}
