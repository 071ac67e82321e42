use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::special::COUNT;

const TAG_A: TokenId = COUNT as TokenId;
const TAG_B: TokenId = COUNT as TokenId + 1;

fn tiny(vocab: usize) -> ModelConfig {
    ModelConfig {
        dropout: 0.0,
        label_smoothing: 0.0,
        ..ModelConfig::tiny(vocab)
    }
}

fn tagged(tokens: &[TokenId]) -> TaggedSentence {
    TaggedSentence {
        tokens: tokens.to_vec(),
        src_tag: TAG_A,
        tgt_tag: TAG_B,
        origin: None,
    }
}

#[test]
fn random_init_is_deterministic() {
    let a = Model::init(tiny(30), Init::Random).unwrap();
    let b = Model::init(tiny(30), Init::Random).unwrap();
    assert!(a == b);
    let c = Model::init(ModelConfig { seed: 2, ..tiny(30) }, Init::Random).unwrap();
    assert!(a.params() != c.params());
}

#[test]
fn from_embeddings_only_replaces_the_table() {
    let cfg = tiny(30);
    let zeros = Mat::zeros(30, cfg.d_model);
    let m = Model::init(cfg.clone(), Init::FromEmbeddings(&zeros)).unwrap();
    assert!(m.embeddings().data().iter().all(|&x| x == 0.0));
    let r = Model::init(cfg, Init::Random).unwrap();
    for id in m.params().ids() {
        if id == m.embedding_param() {
            continue;
        }
        assert_eq!(m.params().get(id), r.params().get(id), "{}", m.params().name(id));
    }
    let w1 = m.params().iter().find(|(n, _)| *n == "enc.0.ff.w1").unwrap().1;
    assert!(w1.data().iter().any(|&x| x != 0.0));
}

#[test]
fn wrong_embedding_shape_is_rejected() {
    let bad = Mat::zeros(29, 32);
    assert!(matches!(
        Model::init(tiny(30), Init::FromEmbeddings(&bad)),
        Err(Error::Shape(_))
    ));
}

#[test]
fn encode_is_pure_and_shaped() {
    let m = Model::init(tiny(30), Init::Random).unwrap();
    let s = tagged(&[7]);
    let a = m.encode(&s).unwrap();
    assert_eq!(a.shape(), (3, 32));
    assert_eq!(a, m.encode(&s).unwrap());
}

#[test]
fn encode_reacts_to_embedding_rows_it_uses() {
    let mut m = Model::init(tiny(30), Init::Random).unwrap();
    let s = tagged(&[7, 8, 9]);
    let before = m.encode(&s).unwrap();
    m.embeddings_mut().row_mut(8)[0] += 0.5;
    assert_ne!(before, m.encode(&s).unwrap());
    // a row the sentence never touches
    let mid = m.encode(&s).unwrap();
    m.embeddings_mut().row_mut(20)[0] += 0.5;
    assert_eq!(mid, m.encode(&s).unwrap());
}

#[test]
fn over_length_input_is_an_error() {
    let m = Model::init(ModelConfig { max_len: 6, ..tiny(30) }, Init::Random).unwrap();
    assert!(m.encode(&tagged(&[7, 8, 9, 10])).is_ok());
    assert!(matches!(m.encode(&tagged(&[7, 8, 9, 10, 11])), Err(Error::Data(_))));
}

#[test]
fn tying_shares_one_table_between_inputs_and_outputs() {
    let mut m = Model::init(tiny(30), Init::Random).unwrap();
    let src = tagged(&[7, 8]).ids();
    let tgt_in = [special::BOS, 9];
    let enc0 = m.encode(&tagged(&[7, 8])).unwrap();
    let log0 = m.forced_logits(&src, &tgt_in);
    // a row used only as an output class
    m.embeddings_mut().row_mut(25)[3] += 1.0;
    assert_eq!(enc0, m.encode(&tagged(&[7, 8])).unwrap());
    let log1 = m.forced_logits(&src, &tgt_in);
    assert_ne!(log0.get(0, 25), log1.get(0, 25));
    assert_eq!(log0.get(0, 24), log1.get(0, 24));
    // and a row used as input
    m.embeddings_mut().row_mut(7)[3] += 1.0;
    assert_ne!(enc0, m.encode(&tagged(&[7, 8])).unwrap());
}

#[test]
fn incremental_decoder_matches_teacher_forcing() {
    let cfg = ModelConfig {
        n_enc_layers: 2,
        n_dec_layers: 2,
        ..tiny(40)
    };
    let m = Model::<f64>::random(cfg).unwrap();
    let srcs: Vec<Vec<TokenId>> = vec![
        tagged(&[7, 8, 9]).ids(),
        tagged(&[10]).ids(),
        tagged(&[11, 12, 13, 14, 15]).ids(),
    ];
    let tgts: Vec<Vec<TokenId>> = vec![vec![20, 21, 22, 23], vec![30, 31, 32, 33], vec![9, 9, 9, 9]];
    let refs: Vec<&[TokenId]> = srcs.iter().map(Vec::as_slice).collect();
    let mut inc = m.incremental(&refs);
    let mut last = vec![special::BOS; 3];
    for t in 0..4 {
        let logits = inc.step(&[0, 1, 2], &last);
        for (s, tgt) in tgts.iter().enumerate() {
            let mut tin = vec![special::BOS];
            tin.extend_from_slice(&tgt[..t]);
            let forced = m.forced_logits(&srcs[s], &tin);
            for (a, b) in logits.row(s).iter().zip(forced.row(t)) {
                assert!((a - b).abs() < 1e-9, "step {t} sent {s}: {a} vs {b}");
            }
        }
        last = tgts.iter().map(|t2| t2[t]).collect();
    }
}

#[test]
fn batch_limits_are_enforced() {
    let mut m = Model::init(tiny(30), Init::Random).unwrap();
    assert!(matches!(m.train_step(&[]), Err(Error::Data(_))));
    let pair = TrainPair {
        src: tagged(&[7, 8]),
        tgt: vec![9, 10],
    };
    let big = vec![pair.clone(); 51];
    assert!(matches!(m.train_step(&big), Err(Error::Data(_))));
    assert_eq!(m.step(), 0);
    assert!(m.train_step(&big[..50]).is_ok());
    assert_eq!(m.step(), 1);
}

#[test]
fn copy_task_loss_decreases() {
    let mut m = Model::init(tiny(30), Init::Random).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch: Vec<TrainPair> = (0..20)
        .map(|_| {
            let toks: Vec<TokenId> = (0..4).map(|_| rng.gen_range(7..30)).collect();
            TrainPair {
                src: tagged(&toks),
                tgt: toks,
            }
        })
        .collect();
    let losses: Vec<f64> = (0..10).map(|_| m.train_step(&batch).unwrap().loss).collect();
    let first: f64 = losses[..3].iter().sum::<f64>() / 3.0;
    let last: f64 = losses[7..].iter().sum::<f64>() / 3.0;
    assert!(last < first, "{losses:?}");
}

#[test]
fn overfits_a_single_pair_and_translates_it() {
    let cfg = ModelConfig {
        lr: 3e-3,
        warmup_steps: 20,
        ..tiny(30)
    };
    let mut m = Model::init(cfg, Init::Random).unwrap();
    let pair = TrainPair {
        src: tagged(&[7, 8, 9]),
        tgt: vec![20, 21, 22, 23],
    };
    let mut loss = f64::INFINITY;
    for _ in 0..500 {
        loss = m.train_step(std::slice::from_ref(&pair)).unwrap().loss;
        if loss < 0.01 {
            break;
        }
    }
    assert!(loss < 0.1, "loss {loss}");
    let out = m.translate(&[7, 8, 9], TAG_A, TAG_B, 10).unwrap();
    assert_eq!(out, vec![20, 21, 22, 23]);
    assert_eq!(out, m.translate(&[7, 8, 9], TAG_A, TAG_B, 10).unwrap());
}

#[test]
fn empty_source_translation_is_bounded() {
    let m = Model::init(tiny(30), Init::Random).unwrap();
    let out = m.translate(&[], TAG_A, TAG_B, 5).unwrap();
    assert!(out.len() <= 5);
    assert!(m.translate(&[7], TAG_A, TAG_B, 0).unwrap().is_empty());
}

#[test]
fn training_is_bitwise_reproducible() {
    let run = || {
        let mut m = Model::init(
            ModelConfig {
                dropout: 0.1,
                ..tiny(30)
            },
            Init::Random,
        )
        .unwrap();
        let batch = vec![TrainPair {
            src: tagged(&[7, 8, 9]),
            tgt: vec![10, 11],
        }];
        for _ in 0..5 {
            m.train_step(&batch).unwrap();
        }
        m
    };
    assert!(run() == run());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut m = Model::init(tiny(30), Init::Random).unwrap();
    m.languages = vec!["la".into(), "lb".into()];
    m.train_step(&[TrainPair {
        src: tagged(&[7, 8]),
        tgt: vec![9],
    }])
    .unwrap();
    m.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert!(back == m);
    let s = tagged(&[7, 8, 12]);
    assert_eq!(back.encode(&s).unwrap(), m.encode(&s).unwrap());
    assert_eq!(
        back.translate(&[7, 8], TAG_A, TAG_B, 6).unwrap(),
        m.translate(&[7, 8], TAG_A, TAG_B, 6).unwrap()
    );
}

#[test]
fn damaged_or_mismatched_checkpoints_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = Model::init(tiny(30), Init::Random).unwrap();
    m.save(&path).unwrap();

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(Model::load(&cut), Err(Error::Checkpoint(_))));

    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x40;
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, &flipped).unwrap();
    assert!(matches!(Model::load(&bad), Err(Error::Checkpoint(_))));

    let mut v2 = bytes.clone();
    v2[8] = 2;
    let newer = dir.path().join("v2.ckpt");
    std::fs::write(&newer, &v2).unwrap();
    let err = Model::load(&newer).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");

    assert!(matches!(Model::load_expecting(&path, 31), Err(Error::Checkpoint(_))));
    assert!(matches!(
        Model::init(tiny(31), Init::FromCheckpoint(&path)),
        Err(Error::Checkpoint(_))
    ));
}

/// Analytic gradients vs central differences on a d_model=8 model.
pub(crate) fn gradient_check(seed: u64, n_params: usize) -> Vec<(String, f64, f64, f64)> {
    let cfg = ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        ff_dim: 16,
        dropout: 0.0,
        label_smoothing: 0.1,
        seed,
        ..ModelConfig::tiny(20)
    };
    let mut model = Model::<f64>::random(cfg).unwrap();
    let batch = vec![
        TrainPair {
            src: tagged(&[7, 8, 9]),
            tgt: vec![10, 11, 12],
        },
        TrainPair {
            src: tagged(&[13, 14]),
            tgt: vec![15, 7, 19, 6],
        },
    ];
    let (_, grads) = model.loss_and_grads(&batch, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let ids: Vec<ParamId> = model.params().ids().collect();
    let eps = 1e-5;
    let mut out = Vec::new();
    while out.len() < n_params {
        let id = ids[rng.gen_range(0..ids.len())];
        let n = model.params().get(id).data().len();
        let i = rng.gen_range(0..n);
        let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
        let orig = model.params().get(id).data()[i];
        model.params_mut().get_mut(id).data_mut()[i] = orig + eps;
        let up = model.eval_loss(&batch).unwrap();
        model.params_mut().get_mut(id).data_mut()[i] = orig - eps;
        let down = model.eval_loss(&batch).unwrap();
        model.params_mut().get_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
        out.push((format!("{}[{i}]", model.params().name(id)), analytic, numeric, rel));
    }
    out
}

#[test]
fn gradients_match_finite_differences() {
    for (name, a, n, rel) in gradient_check(3, 20) {
        assert!(rel <= 1e-3, "{name}: analytic {a} numeric {n} rel {rel}");
    }
}
