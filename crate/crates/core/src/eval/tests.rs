use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

/// Independent corpus BLEU written from the textbook definition.
fn reference_bleu(hyps: &[String], refs: &[String]) -> f64 {
    let mut correct = [0f64; 4];
    let mut total = [0f64; 4];
    let (mut c, mut r) = (0f64, 0f64);
    for (h, rf) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split(' ').filter(|x| !x.is_empty()).collect();
        let rf: Vec<&str> = rf.split(' ').filter(|x| !x.is_empty()).collect();
        c += h.len() as f64;
        r += rf.len() as f64;
        for n in 1..=4 {
            let grams = |t: &[&str]| -> Vec<String> {
                if t.len() < n {
                    vec![]
                } else {
                    (0..=t.len() - n).map(|i| t[i..i + n].join("\u{1}")).collect()
                }
            };
            let hg = grams(&h);
            let mut rg = grams(&rf);
            total[n - 1] += hg.len() as f64;
            for g in hg {
                if let Some(p) = rg.iter().position(|x| *x == g) {
                    rg.swap_remove(p);
                    correct[n - 1] += 1.0;
                }
            }
        }
    }
    let mut logs = 0.0;
    let mut k = 0;
    for n in 0..4 {
        let p = if total[n] == 0.0 {
            0.0
        } else if correct[n] == 0.0 {
            k += 1;
            1.0 / (2f64.powi(k) * total[n])
        } else {
            correct[n] / total[n]
        };
        logs += if p == 0.0 { -9_999_999_999.0 } else { (100.0 * p).ln() };
    }
    let bp = if c >= r {
        1.0
    } else if c == 0.0 {
        0.0
    } else {
        (1.0 - r / c).exp()
    };
    bp * (logs / 4.0).exp()
}

#[test]
fn identity_scores_100() {
    let refs = s(&["a b c d e", "f g h i"]);
    let b = bleu(&refs, &refs).unwrap();
    assert!((b.score - 100.0).abs() < 1e-9);
    assert_eq!(bootstrap_ci(&refs, &refs, 1000, 95.0, 1).unwrap(), (100.0, 100.0));
}

#[test]
fn no_overlap_is_small_but_positive() {
    let hyp = vec![(0..25).map(|i| format!("x{i}")).collect::<Vec<_>>().join(" ")];
    let rf = vec![(0..25).map(|i| format!("y{i}")).collect::<Vec<_>>().join(" ")];
    let b = bleu(&hyp, &rf).unwrap();
    assert!(b.score > 0.0 && b.score < 1.0, "{}", b.score);
}

#[test]
fn errors() {
    assert!(bleu(&s(&["a"]), &s(&[])).is_err());
    assert!(bleu(&[], &[]).is_err());
    assert!(bootstrap_ci(&s(&["a b c d"]), &s(&["a b c d"]), 100, 95.0, 1).is_err());
    assert!(bootstrap_ci(&s(&["a", "b"]), &s(&["a", "b"]), 5, 95.0, 1).is_err());
}

fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>) {
    let n = rng.gen_range(1..6);
    let words = ["a", "b", "c", "d", "e", "f"];
    let sent = |rng: &mut ChaCha8Rng| {
        let len = rng.gen_range(0..12);
        (0..len)
            .map(|_| *words.choose(rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ")
    };
    ((0..n).map(|_| sent(rng)).collect(), (0..n).map(|_| sent(rng)).collect())
}

#[test]
fn matches_reference_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let (h, r) = random_corpus(&mut rng);
        let got = bleu(&h, &r).unwrap().score;
        let want = reference_bleu(&h, &r);
        assert!((got - want).abs() < 1e-4, "{h:?} {r:?}: {got} vs {want}");
    }
}

#[test]
fn corpus_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, r) = random_corpus(&mut rng);
    let mut idx: Vec<usize> = (0..h.len()).collect();
    idx.shuffle(&mut rng);
    let h2: Vec<String> = idx.iter().map(|&i| h[i].clone()).collect();
    let r2: Vec<String> = idx.iter().map(|&i| r[i].clone()).collect();
    assert!((bleu(&h, &r).unwrap().score - bleu(&h2, &r2).unwrap().score).abs() < 1e-12);
}

#[test]
fn bootstrap_is_deterministic_and_usually_covers_the_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut covered = 0;
    let cases = 200;
    for i in 0..cases {
        let n = 30;
        let words = ["a", "b", "c", "d"];
        let sent = |rng: &mut ChaCha8Rng| {
            (0..rng.gen_range(5..10))
                .map(|_| *words.choose(rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let h: Vec<String> = (0..n).map(|_| sent(&mut rng)).collect();
        let r: Vec<String> = (0..n).map(|_| sent(&mut rng)).collect();
        let ci = bootstrap_ci(&h, &r, 200, 95.0, i).unwrap();
        assert_eq!(ci, bootstrap_ci(&h, &r, 200, 95.0, i).unwrap());
        let b = bleu(&h, &r).unwrap().score;
        covered += (ci.0 <= b && b <= ci.1) as usize;
    }
    assert!(covered as f64 >= 0.99 * cases as f64, "{covered}");
}

fn g(doc: &str, a: u64, b: u64) -> GoldPair {
    GoldPair {
        doc_id: doc.into(),
        src_sent_id: a,
        tgt_sent_id: b,
    }
}

#[test]
fn prf_examples() {
    let gold: BTreeSet<_> = [g("d", 0, 0), g("d", 1, 1), g("d", 2, 2), g("e", 0, 0)].into();
    let p = extraction_prf(&gold, &gold);
    assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
    let acc: BTreeSet<_> = [g("d", 0, 0), g("d", 1, 1), g("d", 2, 1)].into();
    let p = extraction_prf(&acc, &gold);
    assert!((p.precision - 2.0 / 3.0).abs() < 1e-12);
    assert!((p.recall - 0.5).abs() < 1e-12);
    assert!((p.f1 - 2.0 * (2.0 / 3.0) * 0.5 / (2.0 / 3.0 + 0.5)).abs() < 1e-12);
    let p = extraction_prf(&BTreeSet::new(), &BTreeSet::new());
    assert_eq!((p.precision, p.recall), (1.0, 1.0));
    let p = extraction_prf(&BTreeSet::new(), &gold);
    assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
}

fn row(run: &str, dir: &str, dev: f64) -> SummaryRow {
    SummaryRow {
        run_id: run.into(),
        technique: "B".into(),
        init: "none".into(),
        direction: dir.into(),
        epoch_of_best: 2,
        dev_bleu: dev,
        test_bleu: dev - 1.0,
        ci_low: dev - 3.0,
        ci_high: dev + 1.0,
        extraction_p: Some(0.5),
        extraction_r: None,
    }
}

#[test]
fn report_is_idempotent_and_schema_checked() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        row("b", "l0-l1", 3.0),
        row("a", "l1-l0", 2.0),
        row("a", "l0-l1", 1.0),
        row("b", "l1-l0", 4.0),
    ];
    emit_report(&rows, dir.path()).unwrap();
    let first = std::fs::read(dir.path().join("summary.csv")).unwrap();
    let mut rev = rows.clone();
    rev.reverse();
    emit_report(&rev, dir.path()).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join("summary.csv")).unwrap());
    let back = read_summary(&dir.path().join("summary.csv")).unwrap();
    assert_eq!(back.len(), 4);
    assert_eq!(back.iter().filter(|r| r.direction == "l0-l1").count(), 2);

    let bad = dir.path().join("bad.csv");
    let text = String::from_utf8(first).unwrap().replace("dev_bleu,", "");
    std::fs::write(&bad, text).unwrap();
    let err = read_summary(&bad).unwrap_err().to_string();
    assert!(err.contains("dev_bleu"), "{err}");
}
