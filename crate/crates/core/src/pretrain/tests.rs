use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::corpus::RawSentence;
use crate::model::{Init, Model, ModelConfig};

fn cos(a: &[f32], b: &[f32]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let n = |v: &[f32]| v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    d / (n(a) * n(b))
}

/// Tokens 10 and 11 always appear together; 12 only with 13..20.
fn cooccurrence_corpus(seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..400)
        .map(|i| {
            let mut s: Vec<u32> = if i % 2 == 0 {
                vec![10, 11, 30 + rng.gen_range(0..5), 30 + rng.gen_range(0..5)]
            } else {
                vec![12, 13 + rng.gen_range(0..7), 13 + rng.gen_range(0..7)]
            };
            let k = rng.gen_range(0..s.len());
            s.rotate_left(k);
            s
        })
        .collect()
}

fn cbow_cfg() -> CbowConfig {
    CbowConfig {
        dim: 16,
        window: 2,
        epochs: 40,
        ..Default::default()
    }
}

#[test]
fn cooccurring_tokens_end_up_close() {
    let e = train_cbow("a", &cooccurrence_corpus(1), &cbow_cfg()).unwrap();
    let row = |t| e.matrix.row(e.row_of(t).unwrap());
    assert!(cos(row(10), row(11)) > cos(row(10), row(12)));
}

#[test]
fn cbow_is_deterministic_and_checks_size() {
    let c = cooccurrence_corpus(2);
    let a = train_cbow("a", &c, &cbow_cfg()).unwrap();
    let b = train_cbow("a", &c, &cbow_cfg()).unwrap();
    assert_eq!(a, b);
    assert!(train_cbow("a", &c[..50], &cbow_cfg()).is_err());
    // min_count drops singletons.
    let mut c2 = c.clone();
    c2.push(vec![99]);
    assert!(train_cbow("a", &c2, &cbow_cfg()).unwrap().row_of(99).is_none());
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let m = nalgebra::DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let q = m.qr().q();
    Mat::from_fn(d, d, |i, j| q[(i, j)])
}

fn set(lang: &str, m: Mat<f32>) -> EmbeddingSet {
    EmbeddingSet {
        lang: lang.into(),
        tokens: (0..m.rows() as u32).collect(),
        counts: vec![1; m.rows()],
        matrix: m,
        fingerprint: String::new(),
    }
}

#[test]
fn planted_rotation_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, d) = (300, 16);
    let x = Mat::<f32>::from_fn(n, d, |_, _| rng.sample::<f32, _>(StandardNormal));
    let q = random_orthogonal(d, &mut rng);
    let y = Mat::from_fn(n, d, |i, j| {
        (0..d).map(|k| x.get(i, k) as f64 * q.get(k, j)).sum::<f64>() as f32
    });
    let lex = SeedLexicon::new((0..50).map(|i| (i, i)).collect(), LexiconSource::CipherGoldSample).unwrap();
    let (mapped, m) = map_embeddings(&set("a", x), &set("b", y.clone()), &lex).unwrap();
    assert!(m.orthogonality_residual() <= 1e-6);
    assert!(!m.is_degenerate());
    for i in 0..d {
        for j in 0..d {
            assert!((m.w.get(i, j) - q.get(i, j)).abs() < 1e-4);
        }
    }
    let mut hits = 0;
    for i in 50..n {
        let best = (0..n)
            .max_by(|&a, &b| cos(mapped.matrix.row(i), y.row(a)).total_cmp(&cos(mapped.matrix.row(i), y.row(b))))
            .unwrap();
        hits += (best == i) as usize;
    }
    assert!(hits as f64 / (n - 50) as f64 >= 0.95);
}

#[test]
fn identical_spaces_map_by_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Mat::<f32>::from_fn(40, 8, |_, _| rng.sample::<f32, _>(StandardNormal));
    let lex = SeedLexicon::new((0..40).map(|i| (i, i)).collect(), LexiconSource::Numbers).unwrap();
    let (_, m) = map_embeddings(&set("a", x.clone()), &set("b", x), &lex).unwrap();
    for i in 0..8 {
        for j in 0..8 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((m.w.get(i, j) - want).abs() <= 1e-6);
        }
    }
}

#[test]
fn degenerate_lexicon_is_flagged() {
    let x = Mat::<f32>::from_fn(30, 8, |_, j| j as f32 + 1.0);
    let lex = SeedLexicon::new((0..30).map(|i| (i, i)).collect(), LexiconSource::SwadeshLike).unwrap();
    let (_, m) = map_embeddings(&set("a", x.clone()), &set("b", x), &lex).unwrap();
    assert!(m.is_degenerate());
    assert!(m.orthogonality_residual() <= 1e-6);
}

#[test]
fn small_lexicon_and_dim_mismatch_are_errors() {
    let a = set("a", Mat::from_fn(30, 4, |i, j| (i + j) as f32));
    let b = set("b", Mat::from_fn(30, 5, |i, j| (i * j) as f32));
    let lex = SeedLexicon::new((0..30).map(|i| (i, i)).collect(), LexiconSource::Numbers).unwrap();
    assert!(map_embeddings(&a, &b, &lex).is_err());
    let short = SeedLexicon::new((0..10).map(|i| (i, i)).collect(), LexiconSource::Numbers).unwrap();
    assert!(map_embeddings(&a, &a, &short).is_err());
    assert!(SeedLexicon::new(vec![(1, 2), (1, 3)], LexiconSource::Numbers).is_err());
}

#[test]
fn we_init_assignment_and_coverage() {
    // Vocab of 50: ids 0..7 reserved, 7..30 seen in a, 20..40 seen in b.
    let mk = |lang: &str, ids: std::ops::Range<u32>, count: u64, fill: f32| EmbeddingSet {
        lang: lang.into(),
        tokens: ids.clone().collect(),
        counts: ids.clone().map(|t| if t == 25 { 1 } else { count }).collect(),
        matrix: Mat::from_fn(ids.len(), 4, |_, _| fill),
        fingerprint: String::new(),
    };
    let a = mk("a", 7..30, 5, 1.0);
    let b = mk("b", 20..40, 3, -1.0);
    let (m, report) = build_we_init(&[&a, &b], 50, 4, 7, 1).unwrap();
    // Manual count: 7..40 are covered.
    assert_eq!(report.assigned, 33);
    assert_eq!(report.random_rows, (40..50).collect::<Vec<u32>>());
    assert!((report.coverage() - 33.0 / 50.0).abs() < 1e-12);
    assert!(m.row(10).iter().all(|&v| (v - 0.5).abs() < 1e-6));
    assert!(m.row(35).iter().all(|&v| (v + 0.5).abs() < 1e-6));
    // Shared token: the more frequent side wins, except token 25.
    assert!(m.row(22)[0] > 0.0);
    assert!(m.row(25)[0] < 0.0);
    assert!(build_we_init(&[&a], 50, 8, 7, 1).is_err());
}

#[test]
fn we_init_only_touches_embeddings() {
    let cfg = ModelConfig::tiny(30);
    let emb = Mat::from_fn(30, cfg.d_model, |i, j| ((i * 7 + j) % 5) as f32 * 0.1);
    let we = Model::init(cfg.clone(), Init::FromEmbeddings(&emb)).unwrap();
    let rnd = Model::init(cfg.clone(), Init::Random).unwrap();
    for id in we.params().ids() {
        if id == we.embedding_param() {
            assert_eq!(we.params().get(id), &emb);
        } else {
            assert_eq!(we.params().get(id), rnd.params().get(id));
        }
    }
    let wrong = Mat::zeros(30, cfg.d_model + 1);
    assert!(Model::init(cfg, Init::FromEmbeddings(&wrong)).is_err());
}

#[test]
fn embedding_file_round_trip() {
    let bpe = crate::corpus::BpeModel::train(&[RawSentence::new("d", "a", 0, "ab ba abba")], 3).unwrap();
    let v = bpe.vocab_size() as u32;
    let e = EmbeddingSet {
        lang: "a".into(),
        tokens: (6..v).collect(),
        counts: (6..v).map(u64::from).collect(),
        matrix: Mat::from_fn((v - 6) as usize, 3, |i, j| i as f32 * 0.25 - j as f32),
        fingerprint: fingerprint(&[vec![1, 2]]),
    };
    assert_eq!(EmbeddingSet::from_text(&e.to_text(&bpe)).unwrap(), e);
    let lex = SeedLexicon::new(vec![(6, 7), (8, 9)], LexiconSource::CipherGoldSample).unwrap();
    let back = SeedLexicon::from_tsv(&lex.to_tsv(&bpe), &bpe, LexiconSource::CipherGoldSample).unwrap();
    assert_eq!(back, lex);
}

fn mono(lang: &str, tag: u32, n: usize, seed: u64, lo: u32, hi: u32) -> MonoData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MonoData {
        lang: lang.into(),
        tag,
        sentences: (0..n)
            .map(|_| (0..rng.gen_range(3..7)).map(|_| rng.gen_range(lo..hi)).collect())
            .collect(),
    }
}

fn dae_model(vocab: usize) -> Model {
    let mut cfg = ModelConfig::tiny(vocab);
    cfg.warmup_steps = 50;
    cfg.lr = 3e-3;
    Model::random(cfg).unwrap()
}

#[test]
fn denoising_reduces_holdout_loss() {
    let data = [mono("a", 5, 600, 1, 8, 30), mono("b", 6, 600, 2, 30, 50)];
    let mut model = dae_model(50);
    let cfg = DaeConfig {
        languages: vec!["a".into(), "b".into()],
        holdout: 50,
        epochs: 3,
        ..Default::default()
    };
    let r = pretrain_dae(&mut model, &cfg, &data).unwrap();
    for ((_, before), (_, after)) in r.holdout_before.iter().zip(&r.holdout_after) {
        assert!(after < before, "{before} -> {after}");
    }
    assert_eq!(model.languages, ["a", "b"]);
    assert!(r.steps > 0);
}

#[test]
fn bilingual_needs_two_languages() {
    let mut model = dae_model(50);
    let cfg = DaeConfig {
        languages: vec!["a".into()],
        ..Default::default()
    };
    assert!(pretrain_dae(&mut model, &cfg, &[mono("a", 5, 300, 1, 8, 30)]).is_err());
}

#[test]
fn multilingual_balancing() {
    let data = [
        mono("a", 5, 900, 1, 8, 30),
        mono("b", 6, 300, 2, 30, 50),
        mono("c", 7, 300, 3, 30, 50),
    ];
    let mut model = dae_model(50);
    let cfg = DaeConfig {
        mode: DaeMode::Multilingual,
        languages: vec!["a".into(), "b".into(), "c".into()],
        holdout: 20,
        epochs: 1,
        ..Default::default()
    };
    let r = pretrain_dae(&mut model, &cfg, &data).unwrap();
    let counts: Vec<usize> = r.instances.iter().map(|x| x.1).collect();
    let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
    assert!(hi as f64 <= lo as f64 * 1.05, "{counts:?}");
}
