use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::ModelConfig;

/// Straightforward per-pair margin with explicit neighbour lists.
fn brute_margin(x: &[f32], y: &[f32], pool_x: &[Vec<f32>], pool_y: &[Vec<f32>], k: usize) -> f64 {
    let cos = |a: &[f32], b: &[f32]| {
        let d: f64 = a.iter().zip(b).map(|(p, q)| *p as f64 * *q as f64).sum();
        let na: f64 = a.iter().map(|p| (*p as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|p| (*p as f64).powi(2)).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            d / (na * nb)
        }
    };
    let knn = |v: &[f32], pool: &[Vec<f32>]| {
        let mut s: Vec<f64> = pool.iter().map(|z| cos(v, z)).collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let k = k.min(s.len());
        s.iter().take(k).sum::<f64>() / (2.0 * k as f64)
    };
    let den = knn(x, pool_y) + knn(y, pool_x);
    if den.abs() < 1e-12 {
        0.0
    } else {
        cos(x, y) / den
    }
}

fn brute_accepted(l1: &[SentenceRepr], l2: &[SentenceRepr], k: usize) -> Vec<(usize, usize)> {
    let pools = |f: fn(&SentenceRepr) -> &Vec<f32>| {
        let a: Vec<Vec<f32>> = l1.iter().map(|r| f(r).clone()).collect();
        let b: Vec<Vec<f32>> = l2.iter().map(|r| f(r).clone()).collect();
        (a, b)
    };
    let mut out = Vec::new();
    for i in 0..l1.len() {
        for j in 0..l2.len() {
            let mut ok = true;
            for f in [(|r: &SentenceRepr| &r.sw) as fn(&SentenceRepr) -> &Vec<f32>, |r| &r.se] {
                let (a, b) = pools(f);
                let s = |i: usize, j: usize| brute_margin(&a[i], &b[j], &a, &b, k);
                let fwd = (0..l2.len()).all(|j2| {
                    if j2 < j {
                        s(i, j2) < s(i, j)
                    } else {
                        s(i, j2) <= s(i, j)
                    }
                });
                let bwd = (0..l1.len()).all(|i2| {
                    if i2 < i {
                        s(i2, j) < s(i, j)
                    } else {
                        s(i2, j) <= s(i, j)
                    }
                });
                ok &= fwd && bwd;
            }
            ok &= ![&l1[i].sw, &l1[i].se, &l2[j].sw, &l2[j].se]
                .iter()
                .any(|v| v.iter().all(|x| *x == 0.0));
            if ok {
                out.push((i, j));
            }
        }
    }
    out
}

fn random_reprs(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<SentenceRepr> {
    (0..n)
        .map(|_| SentenceRepr {
            sw: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            se: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect()
}

fn accepted_pairs(e: &Extraction) -> Vec<(usize, usize)> {
    e.accepted.iter().map(|d| (d.src, d.tgt)).collect()
}

#[test]
fn identical_singletons_score_one() {
    let x = [0.3f32, -1.0, 2.0];
    let s = margin_score(
        &x,
        &x,
        &[&x],
        &[&x],
        &MarginConfig {
            k: 1,
            cosine_floor: 0.0,
        },
    )
    .unwrap();
    assert!((s - 1.0).abs() < 1e-12);
}

#[test]
fn orthogonal_pair_scores_zero() {
    let (x, y) = ([1.0f32, 0.0], [0.0f32, 1.0]);
    let pool: [&[f32]; 2] = [&x, &y];
    let s = margin_score(&x, &y, &pool, &pool, &MarginConfig::default()).unwrap();
    assert_eq!(s, 0.0);
}

#[test]
fn empty_pool_is_an_error() {
    let x = [1.0f32];
    assert!(margin_score(&x, &x, &[], &[&x], &MarginConfig::default()).is_err());
}

#[test]
fn margin_matrix_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = MarginConfig::default();
    let a: Vec<Vec<f32>> = (0..20)
        .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let b: Vec<Vec<f32>> = (0..20)
        .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let ra: Vec<&[f32]> = a.iter().map(Vec::as_slice).collect();
    let rb: Vec<&[f32]> = b.iter().map(Vec::as_slice).collect();
    let m = margin_matrix(&ra, &rb, &cfg).unwrap();
    for i in 0..20 {
        for j in 0..20 {
            let want = brute_margin(&a[i], &b[j], &a, &b, 4);
            assert!((m.get(i, j) - want).abs() < 1e-6);
            let single = margin_score(&a[i], &b[j], &ra, &rb, &cfg).unwrap();
            assert!((single - want).abs() < 1e-6);
        }
    }
}

#[test]
fn selection_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (n, m, dim) = (rng.gen_range(1..=10), rng.gen_range(1..=10), rng.gen_range(1..=6));
        let l1 = random_reprs(&mut rng, n, dim);
        let l2 = random_reprs(&mut rng, m, dim);
        let e = select(&l1, &l2, &MarginConfig::default()).unwrap();
        assert_eq!(accepted_pairs(&e), brute_accepted(&l1, &l2, 4));
    }
}

#[test]
fn singleton_pool_is_accepted() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random_reprs(&mut rng, 1, 4), random_reprs(&mut rng, 1, 4));
    let e = select(&a, &b, &MarginConfig::default()).unwrap();
    assert_eq!(accepted_pairs(&e), vec![(0, 0)]);
    assert!(e.rejected_l1.is_empty() && e.rejected_l2.is_empty());
}

#[test]
fn zero_representation_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_reprs(&mut rng, 1, 4);
    let b = vec![SentenceRepr {
        sw: vec![0.0; 4],
        se: vec![1.0; 4],
    }];
    let e = select(&a, &b, &MarginConfig::default()).unwrap();
    assert!(e.accepted.is_empty());
    assert_eq!(e.decisions[0].reason, Reason::EmptyRepr);
    assert_eq!(e.rejected_l1, vec![0]);
}

#[test]
fn reasons_are_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let l1 = random_reprs(&mut rng, 8, 3);
    let l2 = random_reprs(&mut rng, 8, 3);
    let e = select(&l1, &l2, &MarginConfig::default()).unwrap();
    for d in &e.decisions {
        assert_eq!(d.accepted, d.reason == Reason::Accepted);
        assert_eq!(d.scores[0], d.scores[1]);
    }
}

proptest! {
    #[test]
    fn scaling_and_partition(seed in any::<u64>(), n in 1usize..12, m in 1usize..12, c in 0.01f32..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l1 = random_reprs(&mut rng, n, 5);
        let l2 = random_reprs(&mut rng, m, 5);
        let cfg = MarginConfig::default();
        let e = select(&l1, &l2, &cfg).unwrap();
        let scale = |r: &[SentenceRepr]| r.iter().map(|x| SentenceRepr {
            sw: x.sw.iter().map(|v| v * c).collect(),
            se: x.se.iter().map(|v| v * c).collect(),
        }).collect::<Vec<_>>();
        let scaled = select(&scale(&l1), &scale(&l2), &cfg).unwrap();
        prop_assert_eq!(accepted_pairs(&e), accepted_pairs(&scaled));

        let mut seen1: Vec<usize> = e.accepted.iter().map(|d| d.src).chain(e.rejected_l1.iter().copied()).collect();
        seen1.sort_unstable();
        prop_assert_eq!(seen1, (0..n).collect::<Vec<_>>());
        let mut seen2: Vec<usize> = e.accepted.iter().map(|d| d.tgt).chain(e.rejected_l2.iter().copied()).collect();
        seen2.sort_unstable();
        prop_assert_eq!(seen2, (0..m).collect::<Vec<_>>());
    }
}

fn small_model(seed: u64) -> Model {
    let mut cfg = ModelConfig::tiny(40);
    cfg.seed = seed;
    Model::random(cfg).unwrap()
}

fn tagged(tokens: &[u32], src: u32, tgt: u32) -> TaggedSentence {
    TaggedSentence {
        tokens: tokens.to_vec(),
        src_tag: src,
        tgt_tag: tgt,
        origin: None,
    }
}

#[test]
fn single_token_sw_is_its_embedding() {
    let m = small_model(1);
    let r = represent(&m, &tagged(&[17], 5, 6)).unwrap();
    assert_eq!(r.sw, m.embeddings().row(17));
}

#[test]
fn sw_ignores_order() {
    let m = small_model(1);
    let a = represent(&m, &tagged(&[10, 11, 12], 5, 6)).unwrap();
    let b = represent(&m, &tagged(&[12, 10, 11], 5, 6)).unwrap();
    for (x, y) in a.sw.iter().zip(&b.sw) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn se_depends_on_the_model() {
    let s = tagged(&[10, 11, 12], 5, 6);
    let a = represent(&small_model(1), &s).unwrap();
    let b = represent(&small_model(2), &s).unwrap();
    assert_ne!(a.se, b.se);
}

#[test]
fn over_length_sentence_is_an_error() {
    let m = small_model(1);
    assert!(represent(&m, &tagged(&vec![9; 120], 5, 6)).is_err());
}

#[test]
fn copies_are_extracted_on_the_diagonal() {
    let m = small_model(4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sents: Vec<Vec<u32>> = (0..6)
        .map(|_| (0..rng.gen_range(3..8)).map(|_| rng.gen_range(7..40)).collect())
        .collect();
    let l1: Vec<TaggedSentence> = sents.iter().map(|t| tagged(t, 5, 6)).collect();
    let l2: Vec<TaggedSentence> = sents.iter().map(|t| tagged(t, 5, 6)).collect();
    let e = extract_pairs(&m, &l1, &l2, &MarginConfig::default()).unwrap();
    assert_eq!(accepted_pairs(&e), (0..6).map(|i| (i, i)).collect::<Vec<_>>());
}
