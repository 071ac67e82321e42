use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{finetune, mine, train, write_stats, InitKind, PairTask, TechniqueSet, TrainConfig, TrainData, TrainLog};
use crate::augment::BartNoiseConfig;
use crate::corpus::{
    load_comparable, read_gold, read_sentences, special, BpeModel, ComparableCorpus, GoldPair, RawSentence, TokenId,
};
use crate::eval::{bleu_with_ci, emit_report, extraction_prf, SummaryRow};
use crate::model::{Init, Model, ModelConfig};
use crate::nn::Mat;
use crate::pretrain::{
    build_we_init, map_embeddings, pretrain_dae, train_cbow, CbowConfig, DaeConfig, DaeMode, EmbeddingSet, MonoData,
    SeedLexicon, WeReport,
};
use crate::synthlang::{gen_suite, Profile, Suite};
use crate::{seed, Error, Result};

/// Data of one language pair as read from disk or generated.
#[derive(Clone, Debug, PartialEq)]
pub struct PairInputs {
    pub comparable: ComparableCorpus,
    pub dev: ComparableCorpus,
    pub test: ComparableCorpus,
    pub gold: Option<BTreeSet<GoldPair>>,
    /// Word pairs usable as a seed lexicon, most frequent first.
    pub lexicon: Vec<(String, String)>,
}

impl PairInputs {
    pub fn name(&self) -> String {
        format!("{}-{}", self.comparable.langs.0, self.comparable.langs.1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inputs {
    pub pairs: Vec<PairInputs>,
    pub mono: Vec<RawSentence>,
}

fn read_lexicon(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.split_once('\t') {
            Some((a, b)) if !b.contains('\t') => Ok((a.to_string(), b.to_string())),
            _ => Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected two tab-separated columns".into(),
            }),
        })
        .collect()
}

impl Inputs {
    pub fn from_suite(suite: &Suite) -> Self {
        Inputs {
            pairs: suite
                .pairs
                .iter()
                .map(|p| PairInputs {
                    comparable: p.comparable.clone(),
                    dev: p.dev.clone(),
                    test: p.test.clone(),
                    gold: Some(p.gold.iter().cloned().collect()),
                    lexicon: p.lexicon.clone(),
                })
                .collect(),
            mono: suite.mono.concat(),
        }
    }

    /// Reads a directory laid out like [`Suite::write`]. `only` selects
    /// pairs by name (`a-b`); empty means every pair found. Gold and
    /// lexicon files are optional.
    pub fn read_dir(dir: &Path, only: &[String]) -> Result<Self> {
        let comp = dir.join("comparable");
        let listing = fs::read_dir(&comp).map_err(|e| Error::io(&comp, e))?;
        let mut names = Vec::new();
        for entry in listing {
            let entry = entry.map_err(|e| Error::io(&comp, e))?;
            let file = entry.file_name().to_string_lossy().into_owned();
            if let Some(name) = file.strip_suffix(".jsonl") {
                names.push(name.to_string());
            }
        }
        names.sort();
        for want in only {
            if !names.contains(want) {
                return Err(Error::Data(format!(
                    "{}: no comparable corpus for pair {want}",
                    dir.display()
                )));
            }
        }
        if !only.is_empty() {
            names.retain(|n| only.contains(n));
        }
        if names.is_empty() {
            return Err(Error::Data(format!("{}: no comparable corpora", comp.display())));
        }
        let mut pairs = Vec::new();
        let mut langs = BTreeSet::new();
        for name in &names {
            let file = format!("{name}.jsonl");
            let comparable = load_comparable(&comp.join(&file))?;
            langs.insert(comparable.langs.0.clone());
            langs.insert(comparable.langs.1.clone());
            let gold_path = dir.join("gold").join(&file);
            let lex_path = dir.join("lexicon").join(format!("{name}.tsv"));
            pairs.push(PairInputs {
                dev: load_comparable(&dir.join("dev").join(&file))?,
                test: load_comparable(&dir.join("test").join(&file))?,
                gold: if gold_path.exists() {
                    Some(read_gold(&gold_path)?)
                } else {
                    None
                },
                lexicon: if lex_path.exists() {
                    read_lexicon(&lex_path)?
                } else {
                    Vec::new()
                },
                comparable,
            });
        }
        let mut mono = Vec::new();
        for lang in &langs {
            let p = dir.join("mono").join(format!("{lang}.jsonl"));
            if p.exists() {
                mono.extend(read_sentences(&p)?);
            }
        }
        Ok(Inputs { pairs, mono })
    }

    pub fn languages(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self
            .pairs
            .iter()
            .flat_map(|p| [&p.comparable.langs.0, &p.comparable.langs.1])
            .collect();
        set.into_iter().cloned().collect()
    }

    /// Monolingual plus comparable sentences (the BPE and CBOW training text).
    pub fn training_sentences(&self) -> Vec<RawSentence> {
        let mut out = self.mono.clone();
        for p in &self.pairs {
            out.extend(p.comparable.sentences().cloned());
        }
        out
    }

    pub fn train_data(&self, bpe: &BpeModel) -> Result<TrainData> {
        let tasks = self
            .pairs
            .iter()
            .map(|p| PairTask::new(bpe, &p.comparable, &p.dev))
            .collect::<Result<Vec<_>>>()?;
        TrainData::new(bpe, tasks, &self.mono)
    }

    /// Tokenized text per language: monolingual data when there is any,
    /// otherwise that language's comparable sentences.
    pub fn mono_data(&self, bpe: &BpeModel) -> Result<Vec<MonoData>> {
        let mut by_lang: BTreeMap<String, Vec<Vec<TokenId>>> = BTreeMap::new();
        for s in &self.mono {
            by_lang.entry(s.lang.clone()).or_default().push(bpe.apply(&s.text));
        }
        for lang in self.languages() {
            if by_lang.get(&lang).is_none_or(Vec::is_empty) {
                let side: Vec<Vec<TokenId>> = self
                    .pairs
                    .iter()
                    .flat_map(|p| p.comparable.sentences())
                    .filter(|s| s.lang == lang)
                    .map(|s| bpe.apply(&s.text))
                    .collect();
                by_lang.insert(lang, side);
            }
        }
        by_lang
            .into_iter()
            .map(|(lang, sentences)| {
                Ok(MonoData {
                    tag: bpe.tag_id(&lang)?,
                    lang,
                    sentences,
                })
            })
            .collect()
    }
}

/// Settings of the initialization providers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// CBOW settings; `dim` is replaced by the model width.
    pub cbow: CbowConfig,
    /// Seed-lexicon entries used for each Procrustes mapping.
    pub lexicon_size: usize,
    pub dae_epochs: usize,
    pub dae_holdout: usize,
    pub bart: BartNoiseConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            cbow: CbowConfig::default(),
            lexicon_size: 200,
            dae_epochs: 2,
            dae_holdout: 100,
            bart: BartNoiseConfig::default(),
        }
    }
}

/// Cross-lingual embedding table: CBOW per language, every language mapped
/// onto the alphabetically first one with Procrustes over a seed lexicon
/// from the pair that links them. Languages without such a pair stay
/// unmapped.
pub fn we_matrix(
    bpe: &BpeModel,
    inputs: &Inputs,
    d_model: usize,
    cfg: &PretrainConfig,
    seed_value: u64,
) -> Result<(Mat<f32>, WeReport)> {
    let mono = inputs.mono_data(bpe)?;
    let langs = inputs.languages();
    let hub = &langs[0];
    let mut sets: BTreeMap<String, EmbeddingSet> = BTreeMap::new();
    for lang in &langs {
        let mut sents: Vec<Vec<TokenId>> = mono
            .iter()
            .filter(|m| &m.lang == lang)
            .flat_map(|m| m.sentences.clone())
            .collect();
        for p in &inputs.pairs {
            sents.extend(
                p.comparable
                    .sentences()
                    .filter(|s| &s.lang == lang)
                    .map(|s| bpe.apply(&s.text)),
            );
        }
        let cbow = CbowConfig {
            dim: d_model,
            seed: seed::derive(seed_value, lang, 0),
            ..cfg.cbow.clone()
        };
        sets.insert(lang.clone(), train_cbow(lang, &sents, &cbow)?);
    }
    let mut mapped = vec![sets[hub].clone()];
    for lang in &langs[1..] {
        let link = inputs.pairs.iter().find_map(|p| {
            let (a, b) = &p.comparable.langs;
            if a == hub && b == lang {
                Some(
                    p.lexicon
                        .iter()
                        .map(|(x, y)| (y.clone(), x.clone()))
                        .collect::<Vec<_>>(),
                )
            } else if b == hub && a == lang {
                Some(p.lexicon.clone())
            } else {
                None
            }
        });
        match link {
            Some(words) if !words.is_empty() => {
                let lex = SeedLexicon::from_word_pairs(bpe, &words, cfg.lexicon_size);
                let (m, mapping) = map_embeddings(&sets[lang], &sets[hub], &lex)?;
                log::info!(
                    "mapped {lang} onto {hub} with {} lexicon entries (rank {})",
                    mapping.entries_used,
                    mapping.rank
                );
                mapped.push(m);
            }
            _ => {
                log::warn!("no seed lexicon links {lang} to {hub}; its vectors stay unmapped");
                mapped.push(sets[lang].clone());
            }
        }
    }
    let refs: Vec<&EmbeddingSet> = mapped.iter().collect();
    let first_content = (special::COUNT + bpe.langs().len()) as TokenId;
    build_we_init(&refs, bpe.vocab_size(), d_model, first_content, seed_value)
}

/// A fresh model initialized as `kind` asks.
pub fn build_model(
    kind: InitKind,
    config: ModelConfig,
    bpe: &BpeModel,
    inputs: &Inputs,
    cfg: &PretrainConfig,
) -> Result<Model> {
    let langs = inputs.languages();
    let seed_value = config.seed;
    let mut model = match kind {
        InitKind::We => {
            let (m, report) = we_matrix(bpe, inputs, config.d_model, cfg, seed_value)?;
            log::info!(
                "pretrained vectors cover {:.1}% of the vocabulary",
                100.0 * report.coverage()
            );
            Model::init(config, Init::FromEmbeddings(&m))?
        }
        _ => Model::init(config, Init::Random)?,
    };
    let mode = match kind {
        InitKind::Dae if langs.len() != 2 => {
            return Err(Error::Config(format!(
                "dae init is bilingual but the data has {} languages",
                langs.len()
            )))
        }
        InitKind::Mdae if langs.len() < 3 => {
            return Err(Error::Config(format!(
                "mdae init needs at least 3 languages, got {}",
                langs.len()
            )))
        }
        InitKind::Dae => DaeMode::Bilingual,
        InitKind::Mdae => DaeMode::Multilingual,
        _ => return Ok(model),
    };
    let dae = DaeConfig {
        mode,
        languages: langs,
        base: None,
        holdout: cfg.dae_holdout,
        epochs: cfg.dae_epochs,
        noise: cfg.bart.clone(),
        seed: seed_value,
    };
    let report = pretrain_dae(&mut model, &dae, &inputs.mono_data(bpe)?)?;
    log::info!(
        "denoising: held-out loss {:?} -> {:?}",
        report.holdout_before,
        report.holdout_after
    );
    Ok(model)
}

/// Summary rows (one per direction) for a trained model.
pub fn summarize(
    run_id: &str,
    technique: &str,
    init: &str,
    model: &Model,
    bpe: &BpeModel,
    inputs: &Inputs,
    data: &TrainData,
    cfg: &TrainConfig,
    log: &TrainLog,
) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for p in &inputs.pairs {
        let task = data
            .pairs
            .iter()
            .find(|t| t.langs == p.comparable.langs)
            .ok_or_else(|| Error::Data(format!("pair {} missing from training data", p.name())))?;
        let test = super::ParallelSet::from_corpus(bpe, &p.test)?;
        let prf = match &p.gold {
            Some(gold) => {
                let mined: BTreeSet<GoldPair> = mine(model, task, cfg)?.into_iter().map(|(g, _)| g).collect();
                Some(extraction_prf(&mined, gold))
            }
            None => None,
        };
        for forward in [true, false] {
            let (a, b) = &p.comparable.langs;
            let direction = if forward {
                format!("{a}-{b}")
            } else {
                format!("{b}-{a}")
            };
            let (srcs, refs) = test.side(forward);
            let tags = if forward { task.tags } else { (task.tags.1, task.tags.0) };
            let hyps = super::translate_all(model, bpe, srcs, tags.0, tags.1)?;
            let b = bleu_with_ci(&hyps, refs, cfg.seed)?;
            let (lo, hi) = b.ci.unwrap_or((b.score, b.score));
            let dev = log
                .stats
                .iter()
                .find(|r| r.epoch == log.best_epoch && r.direction == direction)
                .map_or(f64::NAN, |r| r.dev_bleu);
            rows.push(SummaryRow {
                run_id: run_id.to_string(),
                technique: technique.to_string(),
                init: init.to_string(),
                direction,
                epoch_of_best: log.best_epoch,
                dev_bleu: dev,
                test_bleu: b.score,
                ci_low: lo,
                ci_high: hi,
                extraction_p: prf.map(|x| x.precision),
                extraction_r: prf.map(|x| x.recall),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    /// Directory written by `make-synth` (relative to the manifest).
    pub dir: Option<PathBuf>,
    /// Generate a synthetic suite in memory instead.
    pub profile: Option<Profile>,
    #[serde(default = "two")]
    pub n_langs: usize,
    #[serde(default = "one")]
    pub seed: u64,
    /// Pairs to use (`a-b`); empty means all.
    #[serde(default)]
    pub pairs: Vec<String>,
}

fn two() -> usize {
    2
}

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// `tiny` or `toy`.
    pub preset: String,
    pub d_model: Option<usize>,
    pub lr: Option<f64>,
    pub warmup_steps: Option<u64>,
    pub dropout: Option<f64>,
    pub label_smoothing: Option<f64>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            preset: "tiny".into(),
            d_model: None,
            lr: None,
            warmup_steps: None,
            dropout: None,
            label_smoothing: None,
        }
    }
}

impl ModelSpec {
    pub fn config(&self, vocab_size: usize, seed_value: u64) -> Result<ModelConfig> {
        let mut c = match self.preset.as_str() {
            "tiny" => ModelConfig::tiny(vocab_size),
            "toy" => ModelConfig::toy(vocab_size),
            p => return Err(Error::Config(format!("unknown model preset {p:?} (tiny, toy)"))),
        };
        if let Some(d) = self.d_model {
            c.d_model = d;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.warmup_steps {
            c.warmup_steps = v;
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        if let Some(v) = self.label_smoothing {
            c.label_smoothing = v;
        }
        c.seed = seed_value;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub techniques: Vec<TechniqueSet>,
    pub inits: Vec<InitKind>,
    pub seeds: Vec<u64>,
    /// Pairs to finetune multilingual (mdae) runs on.
    #[serde(default)]
    pub finetune: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpeSpec {
    pub merges: usize,
}

impl Default for BpeSpec {
    fn default() -> Self {
        BpeSpec { merges: 1000 }
    }
}

/// Declarative description of an experiment grid (TOML).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Output directory (relative to the manifest).
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub corpus: CorpusSpec,
    #[serde(default)]
    pub bpe: BpeSpec,
    #[serde(default)]
    pub model: ModelSpec,
    /// Base training settings; the grid sets techniques, init and seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    pub grid: Grid,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks everything that does not need the corpus.
    pub fn validate(&self) -> Result<()> {
        match (&self.corpus.dir, &self.corpus.profile) {
            (Some(_), Some(_)) => return Err(Error::Config("corpus: give either dir or profile, not both".into())),
            (None, None) => return Err(Error::Config("corpus: dir or profile is required".into())),
            _ => {}
        }
        let g = &self.grid;
        if g.techniques.is_empty() || g.inits.is_empty() || g.seeds.is_empty() {
            return Err(Error::Config(
                "grid: techniques, inits and seeds must be non-empty".into(),
            ));
        }
        for t in &g.techniques {
            t.validate()?;
        }
        self.train.validate()?;
        self.model.config(special::COUNT + 10, 1)?;
        Ok(())
    }

    /// Loads or generates the corpus.
    pub fn inputs(&self, base: &Path) -> Result<Inputs> {
        let c = &self.corpus;
        let inputs = match (&c.dir, c.profile) {
            (Some(dir), _) => {
                let dir = base.join(dir);
                if !dir.is_dir() {
                    return Err(Error::Data(format!(
                        "corpus directory {} does not exist",
                        dir.display()
                    )));
                }
                Inputs::read_dir(&dir, &c.pairs)?
            }
            (None, Some(p)) => {
                let mut inputs = Inputs::from_suite(&gen_suite(p, c.n_langs, c.seed)?);
                if !c.pairs.is_empty() {
                    for want in &c.pairs {
                        if !inputs.pairs.iter().any(|p| &p.name() == want) {
                            return Err(Error::Data(format!("generated suite has no pair {want}")));
                        }
                    }
                    inputs.pairs.retain(|p| c.pairs.contains(&p.name()));
                    let langs = inputs.languages();
                    inputs.mono.retain(|s| langs.contains(&s.lang));
                }
                inputs
            }
            (None, None) => return Err(Error::Config("corpus: dir or profile is required".into())),
        };
        let n = inputs.languages().len();
        for init in &self.grid.inits {
            match init {
                InitKind::Dae if n != 2 => {
                    return Err(Error::Config(format!(
                        "dae init needs exactly 2 languages, corpus has {n}"
                    )))
                }
                InitKind::Mdae if n < 3 => {
                    return Err(Error::Config(format!(
                        "mdae init needs at least 3 languages, corpus has {n}"
                    )))
                }
                _ => {}
            }
        }
        for f in &self.grid.finetune {
            if !inputs.pairs.iter().any(|p| &p.name() == f) {
                return Err(Error::Config(format!("finetune pair {f} is not in the corpus")));
            }
        }
        Ok(inputs)
    }
}

pub fn run_id(t: TechniqueSet, init: InitKind, seed_value: u64) -> String {
    format!("{t}_{init}_s{seed_value}")
}

#[derive(Serialize)]
struct RunRecord<'a> {
    run_id: &'a str,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    finetune_pair: Option<&'a str>,
    best_epoch: usize,
    epochs_run: usize,
}

fn write_run(dir: &Path, rec: &RunRecord<'_>, model: &Model, log: &TrainLog) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_stats(&dir.join("stats.csv"), &log.stats)?;
    model.save(&dir.join("model.ckpt"))?;
    let p = dir.join("run.json");
    let body = serde_json::to_string_pretty(rec).expect("run record serializes");
    fs::write(&p, body + "\n").map_err(|e| Error::io(&p, e))
}

/// Trains every grid cell of the manifest and writes `runs/<id>/`
/// (stats.csv, model.ckpt, run.json), `bpe.model` and the summary into the
/// output directory, which is returned. Multilingual (mdae) runs are
/// additionally finetuned on each `grid.finetune` pair as `<id>+F-<pair>`.
pub fn run_experiment(manifest_path: &Path) -> Result<PathBuf> {
    let m = Manifest::load(manifest_path)?;
    m.validate()?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let inputs = m.inputs(base)?;
    let out = base.join(&m.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let bpe = BpeModel::train(&inputs.training_sentences(), m.bpe.merges)?;
    bpe.save(&out.join("bpe.model"))?;
    let data = inputs.train_data(&bpe)?;
    let mut rows = Vec::new();
    for &seed_value in &m.grid.seeds {
        for &init in &m.grid.inits {
            for &techniques in &m.grid.techniques {
                let id = run_id(techniques, init, seed_value);
                log::info!("run {id}");
                let mc = m.model.config(bpe.vocab_size(), seed_value)?;
                let cfg = TrainConfig {
                    techniques,
                    init,
                    seed: seed_value,
                    ..m.train.clone()
                };
                let mut model = build_model(init, mc.clone(), &bpe, &inputs, &m.pretrain)?;
                let log = train(&mut model, &data, &cfg, &bpe)?;
                let rec = RunRecord {
                    run_id: &id,
                    model: &mc,
                    train: &cfg,
                    finetune_pair: None,
                    best_epoch: log.best_epoch,
                    epochs_run: log.epochs_run,
                };
                write_run(&out.join("runs").join(&id), &rec, &model, &log)?;
                rows.extend(summarize(
                    &id,
                    &techniques.to_string(),
                    &init.to_string(),
                    &model,
                    &bpe,
                    &inputs,
                    &data,
                    &cfg,
                    &log,
                )?);
                if init != InitKind::Mdae {
                    continue;
                }
                for pair in &m.grid.finetune {
                    let (a, b) = pair
                        .split_once('-')
                        .ok_or_else(|| Error::Config(format!("bad pair name {pair}")))?;
                    let fid = format!("{id}+F-{pair}");
                    let mut fm = model.clone();
                    let flog = finetune(&mut fm, &data, (a, b), &cfg, &bpe)?;
                    let rec = RunRecord {
                        run_id: &fid,
                        model: &mc,
                        train: &cfg,
                        finetune_pair: Some(pair),
                        best_epoch: flog.best_epoch,
                        epochs_run: flog.epochs_run,
                    };
                    write_run(&out.join("runs").join(&fid), &rec, &fm, &flog)?;
                    let only = Inputs {
                        pairs: inputs.pairs.iter().filter(|p| &p.name() == pair).cloned().collect(),
                        mono: Vec::new(),
                    };
                    rows.extend(summarize(
                        &fid,
                        &techniques.to_string(),
                        "mdae+f",
                        &fm,
                        &bpe,
                        &only,
                        &data,
                        &cfg,
                        &flog,
                    )?);
                }
            }
        }
    }
    emit_report(&rows, &out)?;
    Ok(out)
}
