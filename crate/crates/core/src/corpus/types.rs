use serde::{Deserialize, Serialize};

pub type TokenId = u32;

/// Reserved ids at the bottom of every vocabulary. Language tags follow
/// immediately after these.
pub mod special {
    use super::TokenId;

    pub const PAD: TokenId = 0;
    pub const BOS: TokenId = 1;
    pub const EOS: TokenId = 2;
    pub const UNK: TokenId = 3;
    pub const MASK: TokenId = 4;
    pub const COUNT: usize = 5;
    pub const NAMES: [&str; COUNT] = ["<pad>", "<s>", "</s>", "<unk>", "<mask>"];

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < COUNT
    }
}

/// Identity of a corpus sentence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceRef {
    pub doc_id: String,
    pub lang: String,
    pub sent_id: u64,
}

/// One corpus record, before tokenization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSentence {
    pub doc_id: String,
    pub lang: String,
    pub sent_id: u64,
    pub text: String,
}

impl RawSentence {
    pub fn new(doc_id: impl Into<String>, lang: impl Into<String>, sent_id: u64, text: impl Into<String>) -> Self {
        RawSentence {
            doc_id: doc_id.into(),
            lang: lang.into(),
            sent_id,
            text: text.into(),
        }
    }

    pub fn key(&self) -> SentenceRef {
        SentenceRef {
            doc_id: self.doc_id.clone(),
            lang: self.lang.clone(),
            sent_id: self.sent_id,
        }
    }
}

/// A BPE-encoded sentence with its `[source, target]` language tags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Vec<TokenId>,
    pub src_tag: TokenId,
    pub tgt_tag: TokenId,
    pub origin: Option<SentenceRef>,
}

impl TaggedSentence {
    /// Number of encoder positions, tags included.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// `[src_tag, tgt_tag, tokens...]`
    pub fn ids(&self) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(self.len());
        out.push(self.src_tag);
        out.push(self.tgt_tag);
        out.extend_from_slice(&self.tokens);
        out
    }
}
