use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use ssnmt::corpus::{BpeModel, GoldPair};
use ssnmt::eval::{bleu, bootstrap_ci, emit_report, extraction_prf, read_summary, SummaryRow};
use ssnmt::model::Model;
use ssnmt::pretrain::DaeMode;
use ssnmt::scoring::{tsv_line, TSV_HEADER};
use ssnmt::synthlang::{gen_suite_with, Profile};
use ssnmt::trainer::{
    build_model, finetune, mine, read_stats, run_experiment, summarize, translate_all, write_stats, InitKind, Inputs,
    Manifest, ModelSpec, PretrainConfig, TechniqueSet, TrainConfig,
};
use ssnmt::{Error, Result};

use crate::run::{io_err, write_manifest, Lock, RUN_MANIFEST};

#[derive(Parser)]
#[command(name = "ssnmt", version, about = "Self-supervised NMT on comparable corpora")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-language suite.
    MakeSynth(MakeSynth),
    /// Learn BPE merges on a corpus directory.
    TrainBpe(TrainBpe),
    /// Create a model whose embeddings come from mapped CBOW vectors.
    InitWe(InitWe),
    /// Denoising-autoencoder pretraining (bilingual or multilingual).
    PretrainDae(PretrainDae),
    /// Train on comparable corpora with extraction and augmentation.
    Train(Train),
    /// Continue a multilingual model on one language pair.
    Finetune(Finetune),
    /// Translate lines from stdin to stdout.
    Translate(Translate),
    /// Write the sentence pairs a model extracts as TSV.
    Mine(Mine),
    /// Corpus BLEU with a bootstrap interval.
    Evaluate(Evaluate),
    /// Merge summary CSVs into one report.
    Report(Report),
    /// Run a TOML experiment manifest.
    Experiment(Experiment),
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Threads {
    #[value(name = "1")]
    One,
    Auto,
}

#[derive(Args, Serialize)]
pub struct CorpusArgs {
    /// Corpus directory (layout of `make-synth`).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Extra monolingual JSONL files.
    #[arg(long)]
    pub mono: Vec<PathBuf>,
    /// Restrict to pairs whose languages are all listed (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub langs: Vec<String>,
}

impl CorpusArgs {
    fn load(&self) -> Result<Inputs> {
        let mut inputs = Inputs::read_dir(&self.corpus, &[])?;
        for m in &self.mono {
            inputs.mono.extend(ssnmt::corpus::read_sentences(m)?);
        }
        if !self.langs.is_empty() {
            inputs
                .pairs
                .retain(|p| self.langs.contains(&p.comparable.langs.0) && self.langs.contains(&p.comparable.langs.1));
            if inputs.pairs.is_empty() {
                return Err(Error::Data(format!("no corpus pair within languages {:?}", self.langs)));
            }
            let keep = inputs.languages();
            inputs.mono.retain(|s| keep.contains(&s.lang));
        }
        Ok(inputs)
    }

    fn paths(&self) -> Vec<&Path> {
        std::iter::once(self.corpus.as_path())
            .chain(self.mono.iter().map(PathBuf::as_path))
            .collect()
    }
}

#[derive(Args, Serialize)]
pub struct ModelArgs {
    /// Architecture preset: tiny or toy.
    #[arg(long, default_value = "tiny")]
    pub preset: String,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ModelArgs {
    fn spec(&self) -> ModelSpec {
        ModelSpec {
            preset: self.preset.clone(),
            lr: self.lr,
            ..Default::default()
        }
    }
}

#[derive(Args, Serialize)]
pub struct MakeSynth {
    #[arg(long, default_value = "tiny")]
    pub profile: Profile,
    /// Number of languages (l0 is the base language).
    #[arg(long, default_value_t = 2)]
    pub n_langs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Override the profile's comparable document count.
    #[arg(long)]
    pub n_docs: Option<usize>,
    /// Override the monolingual sentence count per language.
    #[arg(long)]
    pub n_mono: Option<usize>,
    /// Override the dev and test set sizes.
    #[arg(long)]
    pub n_eval: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct TrainBpe {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 1000)]
    pub merges: usize,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct InitWe {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub bpe_model: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Seed-lexicon entries per mapped language.
    #[arg(long, default_value_t = 200)]
    pub lexicon_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct PretrainDae {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub bpe_model: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Train all languages of the corpus in one model.
    #[arg(long)]
    pub multilingual: bool,
    #[arg(long, default_value_t = 2)]
    pub epochs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    /// B, B+BT, B+BT+WT, B+BT+WT+N or B+N.
    #[arg(long, default_value = "B")]
    pub techniques: TechniqueSet,
    #[arg(long, default_value_t = 50)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub max_len: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    /// Accepted for interface stability; every run is single-threaded.
    #[arg(long, value_enum, default_value = "1")]
    pub threads: Threads,
}

impl TrainArgs {
    fn config(&self, init: InitKind, seed: u64) -> TrainConfig {
        if matches!(self.threads, Threads::Auto) {
            log::info!("--threads auto: training is single-threaded in this build");
        }
        TrainConfig {
            techniques: self.techniques,
            init,
            batch_size: self.batch_size,
            max_len: self.max_len,
            max_epochs: self.epochs,
            patience: self.patience,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Args, Serialize)]
pub struct Train {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// BPE model; learned from the corpus (and saved in --out) if omitted.
    #[arg(long)]
    pub bpe_model: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub merges: usize,
    #[arg(long, default_value = "none")]
    pub init: InitKind,
    /// Start from this checkpoint instead of building one from --init.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub arch: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct Finetune {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub bpe_model: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Language pair as `a-b`.
    #[arg(long)]
    pub pair: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct Translate {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bpe_model: PathBuf,
    #[arg(long)]
    pub src_lang: String,
    #[arg(long)]
    pub tgt_lang: String,
}

#[derive(Args, Serialize)]
pub struct Mine {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub pair: String,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bpe_model: PathBuf,
    /// Gold alignment; precision and recall go to stderr.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// TSV output (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct Evaluate {
    /// Hypotheses, one segment per line.
    #[arg(long)]
    pub hyp: PathBuf,
    /// References, one segment per line.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Serialize)]
pub struct Report {
    /// Summary CSVs to merge.
    #[arg(long, required = true)]
    pub summary: Vec<PathBuf>,
    /// Stats CSVs to validate against the schema.
    #[arg(long)]
    pub stats: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct Experiment {
    #[arg(long)]
    pub manifest: PathBuf,
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::MakeSynth(a) => make_synth(&a),
        Command::TrainBpe(a) => train_bpe(&a),
        Command::InitWe(a) => init_we(&a),
        Command::PretrainDae(a) => pretrain_dae(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Finetune(a) => finetune_cmd(&a),
        Command::Translate(a) => translate(&a),
        Command::Mine(a) => mine_cmd(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Report(a) => report(&a),
        Command::Experiment(a) => experiment(&a),
    }
}

fn split_pair(pair: &str) -> Result<(&str, &str)> {
    pair.split_once('-')
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .ok_or_else(|| Error::Config(format!("pair {pair:?} is not of the form a-b")))
}

fn make_synth(a: &MakeSynth) -> Result<()> {
    let _lock = Lock::acquire(&a.out)?;
    let mut params = a.profile.params();
    if let Some(n) = a.n_docs {
        params.n_docs = n;
        params.n_mono = 4 * n;
    }
    if let Some(n) = a.n_mono {
        params.n_mono = n;
    }
    if let Some(n) = a.n_eval {
        params.n_dev = n;
        params.n_test = n;
    }
    let mut suite = gen_suite_with(&params, a.n_langs, a.seed)?;
    suite.profile = Some(a.profile);
    suite.write(&a.out)?;
    write_manifest(&a.out.join(RUN_MANIFEST), "make-synth", a, &[])
}

fn train_bpe(a: &TrainBpe) -> Result<()> {
    let inputs = a.corpus.load()?;
    let bpe = BpeModel::train(&inputs.training_sentences(), a.merges)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    bpe.save(&a.out)?;
    let m = a.out.with_extension("manifest.json");
    write_manifest(&m, "train-bpe", a, &a.corpus.paths())?;
    println!("{} tokens, {} merges", bpe.vocab_size(), bpe.num_merges());
    Ok(())
}

fn init_we(a: &InitWe) -> Result<()> {
    let inputs = a.corpus.load()?;
    let bpe = BpeModel::load(&a.bpe_model)?;
    let _lock = Lock::acquire(&a.out)?;
    let mc = a.model.spec().config(bpe.vocab_size(), a.model.seed.unwrap_or(1))?;
    let cfg = PretrainConfig {
        lexicon_size: a.lexicon_size,
        ..Default::default()
    };
    let model = build_model(InitKind::We, mc, &bpe, &inputs, &cfg)?;
    model.save(&a.out.join("model.ckpt"))?;
    let mut inputs_used = a.corpus.paths();
    inputs_used.push(&a.bpe_model);
    write_manifest(&a.out.join(RUN_MANIFEST), "init-we", a, &inputs_used)
}

fn pretrain_dae(a: &PretrainDae) -> Result<()> {
    let inputs = a.corpus.load()?;
    let bpe = BpeModel::load(&a.bpe_model)?;
    let _lock = Lock::acquire(&a.out)?;
    let mc = a.model.spec().config(bpe.vocab_size(), a.model.seed.unwrap_or(1))?;
    let mut model = Model::random(mc)?;
    let cfg = ssnmt::pretrain::DaeConfig {
        mode: if a.multilingual {
            DaeMode::Multilingual
        } else {
            DaeMode::Bilingual
        },
        languages: inputs.languages(),
        epochs: a.epochs,
        seed: a.model.seed.unwrap_or(1),
        ..Default::default()
    };
    let report = ssnmt::pretrain::pretrain_dae(&mut model, &cfg, &inputs.mono_data(&bpe)?)?;
    model.save(&a.out.join("model.ckpt"))?;
    for ((l, before), (_, after)) in report.holdout_before.iter().zip(&report.holdout_after) {
        println!("{l}\theld-out loss {before:.4} -> {after:.4}");
    }
    let mut inputs_used = a.corpus.paths();
    inputs_used.push(&a.bpe_model);
    write_manifest(&a.out.join(RUN_MANIFEST), "pretrain-dae", a, &inputs_used)
}

fn write_summary(rows: &[SummaryRow], out: &Path) -> Result<()> {
    emit_report(rows, out)?;
    print!(
        "{}",
        fs::read_to_string(out.join("summary.txt")).map_err(|e| io_err(out, e))?
    );
    Ok(())
}

fn train_cmd(a: &Train) -> Result<()> {
    let seed = a.arch.seed.unwrap_or(1);
    let cfg = a.train.config(a.init, seed);
    cfg.validate()?;
    let inputs = a.corpus.load()?;
    let _lock = Lock::acquire(&a.out)?;
    let bpe = match &a.bpe_model {
        Some(p) => BpeModel::load(p)?,
        None => {
            let bpe = BpeModel::train(&inputs.training_sentences(), a.merges)?;
            bpe.save(&a.out.join("bpe.model"))?;
            bpe
        }
    };
    let data = inputs.train_data(&bpe)?;
    let mut model = match &a.model {
        Some(p) => Model::load_expecting(p, bpe.vocab_size())?,
        None => {
            let mc = a.arch.spec().config(bpe.vocab_size(), seed)?;
            build_model(a.init, mc, &bpe, &inputs, &PretrainConfig::default())?
        }
    };
    let log = ssnmt::trainer::train(&mut model, &data, &cfg, &bpe)?;
    write_stats(&a.out.join("stats.csv"), &log.stats)?;
    model.save(&a.out.join("model.ckpt"))?;
    let id = ssnmt::trainer::run_id(a.train.techniques, a.init, seed);
    let rows = summarize(
        &id,
        &a.train.techniques.to_string(),
        &a.init.to_string(),
        &model,
        &bpe,
        &inputs,
        &data,
        &cfg,
        &log,
    )?;
    let mut used = a.corpus.paths();
    used.extend(a.bpe_model.as_deref());
    used.extend(a.model.as_deref());
    write_manifest(&a.out.join(RUN_MANIFEST), "train", a, &used)?;
    write_summary(&rows, &a.out)
}

fn finetune_cmd(a: &Finetune) -> Result<()> {
    let (l1, l2) = split_pair(&a.pair)?;
    let cfg = a.train.config(InitKind::Mdae, a.seed);
    cfg.validate()?;
    let inputs = a.corpus.load()?;
    let bpe = BpeModel::load(&a.bpe_model)?;
    let mut model = Model::load_expecting(&a.model, bpe.vocab_size())?;
    let _lock = Lock::acquire(&a.out)?;
    let data = inputs.train_data(&bpe)?;
    let log = finetune(&mut model, &data, (l1, l2), &cfg, &bpe)?;
    write_stats(&a.out.join("stats.csv"), &log.stats)?;
    model.save(&a.out.join("model.ckpt"))?;
    let only = Inputs {
        pairs: inputs
            .pairs
            .iter()
            .filter(|p| {
                let (x, y) = &p.comparable.langs;
                (x == l1 && y == l2) || (x == l2 && y == l1)
            })
            .cloned()
            .collect(),
        mono: Vec::new(),
    };
    let id = format!("finetune-{}", a.pair);
    let rows = summarize(
        &id,
        &a.train.techniques.to_string(),
        "mdae+f",
        &model,
        &bpe,
        &only,
        &data,
        &cfg,
        &log,
    )?;
    let mut used = a.corpus.paths();
    used.push(&a.bpe_model);
    used.push(&a.model);
    write_manifest(&a.out.join(RUN_MANIFEST), "finetune", a, &used)?;
    write_summary(&rows, &a.out)
}

fn translate(a: &Translate) -> Result<()> {
    let bpe = BpeModel::load(&a.bpe_model)?;
    let model = Model::load_expecting(&a.model, bpe.vocab_size())?;
    let (src, tgt) = (bpe.tag_id(&a.src_lang)?, bpe.tag_id(&a.tgt_lang)?);
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut pending: Vec<String> = Vec::new();
    let flush = |lines: &mut Vec<String>, out: &mut dyn Write| -> Result<()> {
        let tokens: Vec<Vec<u32>> = lines.iter().map(|l| bpe.apply(l)).collect();
        let hyps = translate_all(&model, &bpe, &tokens, src, tgt)?;
        for (t, h) in tokens.iter().zip(hyps) {
            let h = if t.is_empty() { String::new() } else { h };
            writeln!(out, "{h}").map_err(|e| Error::Data(format!("stdout: {e}")))?;
        }
        lines.clear();
        Ok(())
    };
    for line in stdin.lock().lines() {
        pending.push(line.map_err(|e| Error::Data(format!("stdin: {e}")))?);
        if pending.len() == 64 {
            flush(&mut pending, &mut out)?;
        }
    }
    flush(&mut pending, &mut out)?;
    out.flush().map_err(|e| Error::Data(format!("stdout: {e}")))
}

fn mine_cmd(a: &Mine) -> Result<()> {
    let inputs = Inputs::read_dir(&a.corpus, std::slice::from_ref(&a.pair))?;
    let bpe = BpeModel::load(&a.bpe_model)?;
    let model = Model::load_expecting(&a.model, bpe.vocab_size())?;
    let data = inputs.train_data(&bpe)?;
    let task = &data.pairs[0];
    let cfg = TrainConfig::default();
    let mined = mine(&model, task, &cfg)?;
    let mut text: HashMap<(&str, &str, u64), &str> = HashMap::new();
    for s in inputs.pairs[0].comparable.sentences() {
        text.insert((&s.doc_id, &s.lang, s.sent_id), &s.text);
    }
    let (l1, l2) = &task.langs;
    let mut body = format!("{TSV_HEADER}\n");
    for (g, d) in &mined {
        let src = text[&(g.doc_id.as_str(), l1.as_str(), g.src_sent_id)];
        let tgt = text[&(g.doc_id.as_str(), l2.as_str(), g.tgt_sent_id)];
        body.push_str(&tsv_line(d, src, tgt));
        body.push('\n');
    }
    match &a.out {
        Some(p) => {
            fs::write(p, &body).map_err(|e| io_err(p, e))?;
            let mut used = vec![a.corpus.as_path(), a.bpe_model.as_path(), a.model.as_path()];
            used.extend(a.gold.as_deref());
            write_manifest(&p.with_extension("manifest.json"), "mine", a, &used)?;
        }
        None => print!("{body}"),
    }
    if let Some(g) = &a.gold {
        let gold = ssnmt::corpus::read_gold(g)?;
        let accepted: BTreeSet<GoldPair> = mined.into_iter().map(|(g, _)| g).collect();
        let prf = extraction_prf(&accepted, &gold);
        eprintln!(
            "precision {:.4} recall {:.4} f1 {:.4} ({} accepted, {} gold)",
            prf.precision, prf.recall, prf.f1, prf.n_accepted, prf.n_gold
        );
    }
    Ok(())
}

fn read_lines(p: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(p)
        .map_err(|e| io_err(p, e))?
        .lines()
        .map(str::to_string)
        .collect())
}

#[derive(Serialize)]
struct BleuOut {
    bleu: f64,
    precisions: [f64; 4],
    brevity_penalty: f64,
    sys_len: usize,
    ref_len: usize,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
}

fn evaluate(a: &Evaluate) -> Result<()> {
    let hyps = read_lines(&a.hyp)?;
    let refs = read_lines(&a.reference)?;
    let b = bleu(&hyps, &refs)?;
    let ci = if hyps.len() >= 2 {
        Some(bootstrap_ci(&hyps, &refs, a.resamples, 95.0, a.seed)?)
    } else {
        None
    };
    let out = BleuOut {
        bleu: b.score,
        precisions: b.precisions,
        brevity_penalty: b.brevity_penalty,
        sys_len: b.sys_len,
        ref_len: b.ref_len,
        ci_low: ci.map(|c| c.0),
        ci_high: ci.map(|c| c.1),
    };
    println!("{}", serde_json::to_string(&out).expect("serializes"));
    Ok(())
}

fn report(a: &Report) -> Result<()> {
    for s in &a.stats {
        read_stats(s)?;
    }
    let mut rows = Vec::new();
    for s in &a.summary {
        rows.extend(read_summary(s)?);
    }
    let _lock = Lock::acquire(&a.out)?;
    let mut used: Vec<&Path> = a.summary.iter().map(PathBuf::as_path).collect();
    used.extend(a.stats.iter().map(PathBuf::as_path));
    write_manifest(&a.out.join(RUN_MANIFEST), "report", a, &used)?;
    write_summary(&rows, &a.out)
}

fn experiment(a: &Experiment) -> Result<()> {
    let m = Manifest::load(&a.manifest)?;
    m.validate()?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let out = base.join(&m.out);
    let _lock = Lock::acquire(&out)?;
    let out = run_experiment(&a.manifest)?;
    write_manifest(&out.join(RUN_MANIFEST), "experiment", &m, &[&a.manifest])?;
    print!(
        "{}",
        fs::read_to_string(out.join("summary.txt")).map_err(|e| io_err(&out, e))?
    );
    Ok(())
}
