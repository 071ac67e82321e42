//! The online training loop. Per document pair: parallel sentence
//! extraction, back-translation of the rejects, word translation of what BT
//! still rejects, and a noised copy of everything produced. Batches are
//! trained as they fill; each epoch ends with a dev BLEU evaluation.

mod data;
mod experiment;
mod stats;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use data::{PairTask, ParallelSet, TokDoc, TokSentence, TrainData};
pub use experiment::{
    build_model, run_experiment, run_id, summarize, we_matrix, BpeSpec, CorpusSpec, Grid, Inputs, Manifest, ModelSpec,
    PairInputs, PretrainConfig,
};
pub use stats::{read_stats, stats_csv, write_stats, Counts, EpochStats, Phase, STATS_HEADER};

use crate::augment::{add_noise_with, backtranslate, bt_cap, NoiseConfig, Provenance, SyntheticPair, WordTranslator};
use crate::corpus::{BpeModel, GoldPair, SentenceRef, TaggedSentence, TokenId};
use crate::eval::{bleu, BleuResult};
use crate::model::{Model, TrainPair};
use crate::scoring::{extract_pairs, AcceptanceDecision, MarginConfig};
use crate::{seed, Error, Result};

/// Which augmentations run on top of extraction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TechniqueSet {
    pub bt: bool,
    pub wt: bool,
    pub n: bool,
}

impl TechniqueSet {
    pub const B: TechniqueSet = TechniqueSet {
        bt: false,
        wt: false,
        n: false,
    };
    pub const B_BT: TechniqueSet = TechniqueSet {
        bt: true,
        wt: false,
        n: false,
    };
    pub const B_BT_WT: TechniqueSet = TechniqueSet {
        bt: true,
        wt: true,
        n: false,
    };
    pub const B_BT_WT_N: TechniqueSet = TechniqueSet {
        bt: true,
        wt: true,
        n: true,
    };
    pub const B_N: TechniqueSet = TechniqueSet {
        bt: false,
        wt: false,
        n: true,
    };

    /// Word translation consumes what back-translation rejects.
    pub fn validate(&self) -> Result<()> {
        if self.wt && !self.bt {
            return Err(Error::Config("WT requires BT".into()));
        }
        Ok(())
    }
}

impl fmt::Display for TechniqueSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("B")?;
        for (on, name) in [(self.bt, "+BT"), (self.wt, "+WT"), (self.n, "+N")] {
            if on {
                f.write_str(name)?;
            }
        }
        Ok(())
    }
}

impl FromStr for TechniqueSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+').map(str::trim);
        if parts.next() != Some("B") {
            return Err(Error::Config(format!("technique set {s:?} must start with B")));
        }
        let mut t = TechniqueSet::B;
        for p in parts {
            let flag = match p {
                "BT" => &mut t.bt,
                "WT" => &mut t.wt,
                "N" => &mut t.n,
                _ => return Err(Error::Config(format!("unknown technique {p:?} in {s:?}"))),
            };
            if *flag {
                return Err(Error::Config(format!("technique {p} repeated in {s:?}")));
            }
            *flag = true;
        }
        t.validate()?;
        Ok(t)
    }
}

impl TryFrom<String> for TechniqueSet {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TechniqueSet> for String {
    fn from(t: TechniqueSet) -> String {
        t.to_string()
    }
}

/// How the model is initialized before comparable-corpus training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InitKind {
    #[default]
    None,
    We,
    Dae,
    Mdae,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::None => "none",
            InitKind::We => "we",
            InitKind::Dae => "dae",
            InitKind::Mdae => "mdae",
        })
    }
}

impl FromStr for InitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(InitKind::None),
            "we" => Ok(InitKind::We),
            "dae" => Ok(InitKind::Dae),
            "mdae" => Ok(InitKind::Mdae),
            _ => Err(Error::Config(format!("unknown init {s:?} (none, we, dae, mdae)"))),
        }
    }
}

impl TryFrom<String> for InitKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InitKind> for String {
    fn from(t: InitKind) -> String {
        t.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub techniques: TechniqueSet,
    pub init: InitKind,
    /// Languages of the run; empty means whatever the data covers.
    pub languages: Vec<String>,
    pub batch_size: usize,
    /// Longest tagged sentence; longer ones are skipped, never truncated.
    pub max_len: usize,
    pub max_epochs: usize,
    /// Epochs without a better mean dev BLEU before stopping.
    pub patience: usize,
    pub seed: u64,
    pub margin: MarginConfig,
    pub noise: NoiseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            techniques: TechniqueSet::B,
            init: InitKind::None,
            languages: Vec::new(),
            batch_size: 50,
            max_len: 100,
            max_epochs: 10,
            patience: 3,
            seed: 1,
            margin: MarginConfig::default(),
            noise: NoiseConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.techniques.validate()?;
        self.margin.validate()?;
        self.noise.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.max_len < 4 {
            return Err(Error::Config(format!("max_len {} too small", self.max_len)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".into()));
        }
        if self.init == InitKind::Mdae && !self.languages.is_empty() && self.languages.len() < 3 {
            return Err(Error::Config(format!(
                "MDAE needs at least 3 languages, got {}",
                self.languages.len()
            )));
        }
        Ok(())
    }

    fn fits(&self, tokens: &[TokenId]) -> bool {
        !tokens.is_empty() && tokens.len() + 2 <= self.max_len
    }
}

/// Output of a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub stats: Vec<EpochStats>,
    /// Epoch whose weights were kept (0 if no epoch ran).
    pub best_epoch: usize,
    pub best_dev_bleu: f64,
    pub epochs_run: usize,
}

/// Where the sentences of one side of a document went.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SideCounts {
    pub n_sentences: usize,
    pub n_spe_accepted: usize,
    pub n_bt_accepted: usize,
    pub n_wt: usize,
    /// Rejected by every active technique, or too long to use.
    pub n_unused: usize,
}

/// A training item and the index of its direction in
/// [`TrainData::directions`].
#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub pair: SyntheticPair,
    pub direction: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DocOutcome {
    /// In flush order: SPE, BT, WT, then noised copies.
    pub items: Vec<Item>,
    /// Accepted `(l1 sent_id, l2 sent_id)` pairs with their decisions.
    pub accepted: Vec<(u64, u64, AcceptanceDecision)>,
    /// Indexed by direction within the pair (0 forward, 1 backward).
    pub counts: [Counts; 2],
    pub sides: [SideCounts; 2],
}

fn tagged(s: &TokSentence, doc: &str, lang: &str, tags: (TokenId, TokenId)) -> TaggedSentence {
    TaggedSentence {
        tokens: s.tokens.clone(),
        src_tag: tags.0,
        tgt_tag: tags.1,
        origin: Some(SentenceRef {
            doc_id: doc.to_string(),
            lang: lang.to_string(),
            sent_id: s.sent_id,
        }),
    }
}

/// Runs the cascade on one document pair with the current model.
/// `vocab[0]` is the word-translation vocabulary for l1 sentences (so l2
/// tokens), `vocab[1]` the one for l2 sentences.
pub fn process_document(
    model: &Model,
    task: &PairTask,
    doc: &TokDoc,
    vocab: &[&[TokenId]; 2],
    cfg: &TrainConfig,
    noise_seed: u64,
) -> Result<DocOutcome> {
    let (t1, t2) = task.tags;
    let (lang1, lang2) = (&task.langs.0, &task.langs.1);
    let usable =
        |side: &[TokSentence]| -> Vec<usize> { (0..side.len()).filter(|&i| cfg.fits(&side[i].tokens)).collect() };
    let (u1, u2) = (usable(&doc.l1), usable(&doc.l2));
    let mut out = DocOutcome::default();
    out.sides[0].n_sentences = doc.l1.len();
    out.sides[1].n_sentences = doc.l2.len();
    if u1.is_empty() || u2.is_empty() {
        out.sides[0].n_unused = doc.l1.len();
        out.sides[1].n_unused = doc.l2.len();
        return Ok(out);
    }
    // Side 0 sentences point l1→l2, side 1 sentences l2→l1.
    let s1: Vec<TaggedSentence> = u1
        .iter()
        .map(|&i| tagged(&doc.l1[i], &doc.doc_id, lang1, (t1, t2)))
        .collect();
    let s2: Vec<TaggedSentence> = u2
        .iter()
        .map(|&i| tagged(&doc.l2[i], &doc.doc_id, lang2, (t2, t1)))
        .collect();

    let ex = extract_pairs(model, &s1, &s2, &cfg.margin)?;
    let mut spe = Vec::new();
    for d in &ex.accepted {
        let (a, b) = (&s1[d.src], &s2[d.tgt]);
        spe.push(Item {
            pair: SyntheticPair {
                src: a.clone(),
                tgt: b.tokens.clone(),
                provenance: Provenance::Spe,
            },
            direction: 0,
        });
        spe.push(Item {
            pair: SyntheticPair {
                src: b.clone(),
                tgt: a.tokens.clone(),
                provenance: Provenance::Spe,
            },
            direction: 1,
        });
        out.accepted
            .push((doc.l1[u1[d.src]].sent_id, doc.l2[u2[d.tgt]].sent_id, d.clone()));
    }
    for c in &mut out.counts {
        c.n_spe_accepted = ex.accepted.len();
    }
    for s in &mut out.sides {
        s.n_spe_accepted = ex.accepted.len();
    }

    let mut bt_items = Vec::new();
    let mut wt_items = Vec::new();
    let sides: [(&[TaggedSentence], &[TaggedSentence], &[usize]); 2] =
        [(&s1, &s2, &ex.rejected_l1), (&s2, &s1, &ex.rejected_l2)];
    for (side, (own, other, rejected)) in sides.into_iter().enumerate() {
        // Pairs built from this side's sentences train the opposite direction.
        let dir = 1 - side;
        let mut left: Vec<usize> = rejected.to_vec();
        if cfg.techniques.bt && !left.is_empty() {
            let rej: Vec<&TaggedSentence> = left.iter().map(|&i| &own[i]).collect();
            let others: Vec<&TaggedSentence> = other.iter().collect();
            let bt = backtranslate(model, &rej, &others, &cfg.margin)?;
            out.counts[dir].n_bt_generated += rej.len();
            out.counts[dir].n_bt_accepted += bt.accepted.len();
            out.sides[side].n_bt_accepted += bt.accepted.len();
            bt_items.extend(bt.accepted.into_iter().map(|pair| Item { pair, direction: dir }));
            left = bt.still_rejected.iter().map(|&k| left[k]).collect();
        }
        if cfg.techniques.wt && !left.is_empty() {
            let wt = WordTranslator::new(model.embeddings(), vocab[side])?;
            for &i in &left {
                wt_items.push(Item {
                    pair: wt.word_translate(&own[i]),
                    direction: dir,
                });
            }
            out.counts[dir].n_wt += left.len();
            out.sides[side].n_wt += left.len();
            left.clear();
        }
        out.sides[side].n_unused = left.len() + out.sides[side].n_sentences - own.len();
    }

    out.items = spe;
    out.items.extend(bt_items);
    out.items.extend(wt_items);
    if cfg.techniques.n {
        let mut rng = seed::rng(noise_seed, &doc.doc_id, 0);
        let noised: Vec<Item> = out
            .items
            .iter()
            .map(|it| Item {
                pair: add_noise_with(&it.pair, &cfg.noise, &mut rng),
                direction: it.direction,
            })
            .collect();
        for it in &noised {
            out.counts[it.direction].n_noise_copies += 1;
        }
        out.items.extend(noised);
    }
    Ok(out)
}

/// Greedy translations of `sources`, detokenized.
pub fn translate_all(
    model: &Model,
    bpe: &BpeModel,
    sources: &[Vec<TokenId>],
    src_tag: TokenId,
    tgt_tag: TokenId,
) -> Result<Vec<String>> {
    let max_len = model.config().max_len;
    let mut out = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(64) {
        let batch: Vec<TaggedSentence> = chunk
            .iter()
            .map(|s| TaggedSentence {
                tokens: s[..s.len().min(max_len - 2)].to_vec(),
                src_tag,
                tgt_tag,
                origin: None,
            })
            .collect();
        let cap = chunk.iter().map(|s| bt_cap(s.len(), max_len)).max().unwrap_or(1);
        for (s, mut t) in chunk.iter().zip(model.translate_batch(&batch, cap)?) {
            t.truncate(bt_cap(s.len(), max_len));
            out.push(bpe.decode(&t));
        }
    }
    Ok(out)
}

/// BLEU of one direction of a parallel set (`forward` is l1→l2).
pub fn evaluate_direction(
    model: &Model,
    bpe: &BpeModel,
    set: &ParallelSet,
    tags: (TokenId, TokenId),
    forward: bool,
) -> Result<BleuResult> {
    let (srcs, refs) = set.side(forward);
    let (a, b) = if forward { tags } else { (tags.1, tags.0) };
    let hyps = translate_all(model, bpe, srcs, a, b)?;
    bleu(&hyps, refs)
}

/// Dev BLEU for every direction in [`TrainData::directions`] order.
pub fn dev_bleu(model: &Model, bpe: &BpeModel, data: &TrainData) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for p in &data.pairs {
        for forward in [true, false] {
            out.push(if p.dev.is_empty() {
                0.0
            } else {
                evaluate_direction(model, bpe, &p.dev, p.tags, forward)?.score
            });
        }
    }
    Ok(out)
}

/// Pairs the current model extracts from a task, as gold-comparable ids.
pub fn mine(model: &Model, task: &PairTask, cfg: &TrainConfig) -> Result<Vec<(GoldPair, AcceptanceDecision)>> {
    let extract_only = TrainConfig {
        techniques: TechniqueSet::B,
        ..cfg.clone()
    };
    let mut out = Vec::new();
    for doc in &task.docs {
        let o = process_document(model, task, doc, &[&[], &[]], &extract_only, 0)?;
        for (a, b, d) in o.accepted {
            out.push((
                GoldPair {
                    doc_id: doc.doc_id.clone(),
                    src_sent_id: a,
                    tgt_sent_id: b,
                },
                d,
            ));
        }
    }
    Ok(out)
}

/// Trains on the comparable corpora of `data`. The returned model state is
/// the epoch with the best mean dev BLEU.
pub fn train(model: &mut Model, data: &TrainData, cfg: &TrainConfig, bpe: &BpeModel) -> Result<TrainLog> {
    run(model, data, cfg, bpe, Phase::Train)
}

/// Continues training a multilingual model on one of its language pairs.
pub fn finetune(
    model: &mut Model,
    data: &TrainData,
    pair: (&str, &str),
    cfg: &TrainConfig,
    bpe: &BpeModel,
) -> Result<TrainLog> {
    for l in [pair.0, pair.1] {
        if !model.languages.iter().any(|m| m == l) {
            return Err(Error::Config(format!(
                "cannot finetune on {l}: the model was trained on [{}]",
                model.languages.join(", ")
            )));
        }
    }
    let restricted = data.restrict(pair.0, pair.1)?;
    if cfg.max_epochs == 0 {
        return Ok(TrainLog::default());
    }
    run(model, &restricted, cfg, bpe, Phase::Finetune)
}

struct Accumulator {
    counts: Vec<Counts>,
    loss_sum: Vec<f64>,
    loss_n: Vec<usize>,
}

fn train_batch(model: &mut Model, batch: &[Item], acc: &mut Accumulator) -> Result<()> {
    let pairs: Vec<TrainPair> = batch.iter().map(|it| it.pair.to_train()).collect();
    let out = model.train_step(&pairs)?;
    for (it, l) in batch.iter().zip(out.item_losses) {
        acc.loss_sum[it.direction] += l;
        acc.loss_n[it.direction] += 1;
    }
    Ok(())
}

fn run(model: &mut Model, data: &TrainData, cfg: &TrainConfig, bpe: &BpeModel, phase: Phase) -> Result<TrainLog> {
    cfg.validate()?;
    let mc = model.config();
    if cfg.max_len > mc.max_len {
        return Err(Error::Config(format!(
            "max_len {} exceeds the model's {}",
            cfg.max_len, mc.max_len
        )));
    }
    if cfg.batch_size > mc.max_batch {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the model's {}",
            cfg.batch_size, mc.max_batch
        )));
    }
    if mc.vocab_size != bpe.vocab_size() {
        return Err(Error::Config(format!(
            "model vocabulary {} does not match the BPE model's {}",
            mc.vocab_size,
            bpe.vocab_size()
        )));
    }
    if data.num_docs() == 0 {
        return Err(Error::Data("empty corpus".into()));
    }
    let langs = data.languages();
    if !cfg.languages.is_empty() {
        if let Some(l) = langs.iter().find(|l| !cfg.languages.contains(l)) {
            return Err(Error::Config(format!(
                "corpus language {l} is not in the configured languages"
            )));
        }
    }
    if cfg.init == InitKind::Mdae && langs.len().max(cfg.languages.len()) < 3 && phase == Phase::Train {
        return Err(Error::Config("MDAE training needs at least 3 languages".into()));
    }
    let known: BTreeSet<String> = model.languages.iter().cloned().chain(langs).collect();
    model.languages = known.into_iter().collect();

    let directions = data.directions();
    let vocab_of = |lang: &str| data.vocab.get(lang).map(Vec::as_slice).unwrap_or(&[]);
    let schedule = data.schedule();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Model)> = None;
    for epoch in 1..=cfg.max_epochs {
        let mut acc = Accumulator {
            counts: vec![Counts::default(); directions.len()],
            loss_sum: vec![0.0; directions.len()],
            loss_n: vec![0; directions.len()],
        };
        let noise_seed = seed::derive(cfg.seed, "noise", epoch as u64);
        let mut queue: Vec<Item> = Vec::new();
        for &(p, d) in &schedule {
            let task = &data.pairs[p];
            let vocab = [vocab_of(&task.langs.1), vocab_of(&task.langs.0)];
            let o = process_document(
                model,
                task,
                &task.docs[d],
                &vocab,
                cfg,
                seed::derive(noise_seed, "pair", p as u64),
            )?;
            for k in 0..2 {
                acc.counts[2 * p + k].add(&o.counts[k]);
            }
            queue.extend(
                o.items
                    .into_iter()
                    .filter(|it| cfg.fits(&it.pair.src.tokens) && cfg.fits(&it.pair.tgt))
                    .map(|mut it| {
                        it.direction += 2 * p;
                        it
                    }),
            );
            while queue.len() >= cfg.batch_size {
                let rest = queue.split_off(cfg.batch_size);
                train_batch(model, &queue, &mut acc)?;
                queue = rest;
            }
        }
        if !queue.is_empty() {
            train_batch(model, &queue, &mut acc)?;
        }
        let bleus = dev_bleu(model, bpe, data)?;
        for (k, dir) in directions.iter().enumerate() {
            log.stats.push(EpochStats {
                epoch,
                phase,
                direction: dir.clone(),
                counts: acc.counts[k],
                mean_train_loss: if acc.loss_n[k] > 0 {
                    acc.loss_sum[k] / acc.loss_n[k] as f64
                } else {
                    f64::NAN
                },
                dev_bleu: bleus[k],
            });
        }
        let mean = bleus.iter().sum::<f64>() / bleus.len() as f64;
        log::info!("{phase} epoch {epoch}: mean dev BLEU {mean:.2}");
        log.epochs_run = epoch;
        if best.as_ref().is_none_or(|(b, _)| mean > *b) {
            best = Some((mean, model.clone()));
            log.best_epoch = epoch;
            log.best_dev_bleu = mean;
        } else if epoch - log.best_epoch >= cfg.patience {
            break;
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(log)
}
