use std::collections::{BTreeMap, HashMap};

use super::*;
use crate::corpus::vocab_overlap;

fn small() -> ProfileParams {
    ProfileParams {
        vocab_size: 80,
        n_docs: 30,
        sents_per_doc: 3,
        len_min: 3,
        len_max: 6,
        parallel_fraction: 0.5,
        swap_window: 2,
        shared_fraction: 0.0,
        glyphs: true,
        n_mono: 50,
        n_dev: 10,
        n_test: 10,
    }
}

#[test]
fn single_sentence_corpus() {
    let c = gen_base_corpus(50, 1, 1, 3..=5, 7).unwrap();
    assert_eq!(c.docs.len(), 1);
    assert_eq!(c.docs[0].sentences.len(), 1);
}

#[test]
fn base_corpus_is_deterministic() {
    let a = gen_base_corpus(100, 20, 3, 2..=9, 11).unwrap();
    let b = gen_base_corpus(100, 20, 3, 2..=9, 11).unwrap();
    assert_eq!(a.docs, b.docs);
    let c = gen_base_corpus(100, 20, 3, 2..=9, 12).unwrap();
    assert_ne!(a.docs, c.docs);
}

#[test]
fn rejects_small_vocab_and_bad_ranges() {
    assert!(gen_base_corpus(10, 1, 1, 1..=3, 0).is_err());
    #[allow(clippy::reversed_empty_ranges)]
    let empty = 5..=2;
    assert!(gen_base_corpus(60, 1, 1, empty, 0).is_err());
    assert!(gen_base_corpus(60, 1, 1, 0..=3, 0).is_err());
    assert!(gen_base_corpus(60, 0, 1, 1..=3, 0).is_err());
}

#[test]
fn lengths_within_range() {
    let c = gen_base_corpus(200, 100, 10, 3..=7, 5).unwrap();
    for d in &c.docs {
        for s in &d.sentences {
            let n = s.split_whitespace().count();
            assert!((3..=7).contains(&n), "{s}");
        }
    }
}

#[test]
fn documents_have_distinct_frequent_words() {
    let c = gen_base_corpus(500, 2, 50, 8..=8, 3).unwrap();
    let top = |d: &BaseDoc| {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in &d.sentences {
            for w in s.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut v: Vec<_> = counts.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        v.into_iter().take(10).map(|(w, _)| w.to_string()).collect::<Vec<_>>()
    };
    let (a, b) = (top(&c.docs[0]), top(&c.docs[1]));
    let shared = a.iter().filter(|w| b.contains(w)).count();
    assert!(shared <= 4, "{a:?} vs {b:?}");
}

#[test]
fn plain_cipher_is_a_lexicon_copy_with_diagonal_gold() {
    let c = gen_base_corpus(60, 3, 4, 2..=6, 1).unwrap();
    let mut spec = CipherSpec::random(c.language.words(), 0.0, None, 0, 1.0, 9).unwrap();
    spec.glyph_map = None;
    for d in &c.docs {
        let (out, gold) = apply_cipher(&c, d, &spec, "b").unwrap();
        for (i, (s, t)) in d.sentences.iter().zip(&out).enumerate() {
            let want: Vec<&str> = s.split_whitespace().map(|w| spec.lexicon_map[w].as_str()).collect();
            assert_eq!(t.text, want.join(" "));
            assert_eq!(gold[i].src_sent_id, i as u64);
            assert_eq!(gold[i].tgt_sent_id, i as u64);
        }
        assert_eq!(gold.len(), d.sentences.len());
    }
}

#[test]
fn zero_parallel_fraction_gives_no_gold() {
    let c = gen_base_corpus(60, 5, 4, 2..=6, 1).unwrap();
    let spec = CipherSpec::random(c.language.words(), 0.0, Some(0), 1, 0.0, 9).unwrap();
    for d in &c.docs {
        let (out, gold) = apply_cipher(&c, d, &spec, "b").unwrap();
        assert!(gold.is_empty());
        assert_eq!(out.len(), 4);
    }
}

#[test]
fn unmapped_word_is_an_error() {
    let c = gen_base_corpus(60, 1, 1, 2..=6, 1).unwrap();
    let spec = CipherSpec::random(c.language.words(), 0.0, None, 0, 1.0, 9).unwrap();
    assert!(spec.encipher("qqqqq").is_err());
}

#[test]
fn inverse_maps_recover_sources() {
    let c = gen_base_corpus(120, 10, 5, 2..=9, 4).unwrap();
    let spec = CipherSpec::random(c.language.words(), 0.0, Some(1), 0, 1.0, 3).unwrap();
    // Independent inverse built from the spec's tables.
    let inv_glyph: BTreeMap<char, char> = spec.glyph_map.as_ref().unwrap().iter().map(|(a, b)| (*b, *a)).collect();
    let inv_lex: BTreeMap<&String, &String> = spec.lexicon_map.iter().map(|(a, b)| (b, a)).collect();
    for d in &c.docs {
        let (out, _) = apply_cipher(&c, d, &spec, "b").unwrap();
        for (s, t) in d.sentences.iter().zip(&out) {
            let back: Vec<String> = t
                .text
                .split_whitespace()
                .map(|w| {
                    let plain: String = w.chars().map(|ch| inv_glyph[&ch]).collect();
                    inv_lex[&plain].clone()
                })
                .collect();
            assert_eq!(&back.join(" "), s);
            assert_eq!(&spec.decipher(&t.text).unwrap(), s);
        }
    }
}

#[test]
fn reordering_is_bounded_and_self_inverse() {
    for w in 0..=3 {
        for n in 0..12 {
            let orig: Vec<usize> = (0..n).collect();
            let mut v = orig.clone();
            reorder(&mut v, w);
            for (pos, &x) in v.iter().enumerate() {
                assert!(pos.abs_diff(x) <= w);
            }
            reorder(&mut v, w);
            assert_eq!(v, orig);
        }
    }
}

#[test]
fn gold_targets_are_reordered_ciphers() {
    let suite = gen_suite_with(&small(), 2, 21).unwrap();
    let pair = &suite.pairs[0];
    let spec = &suite.ciphers[1];
    let docs: HashMap<&str, &crate::corpus::DocPair> = pair
        .comparable
        .doc_pairs
        .iter()
        .map(|d| (d.doc_id.as_str(), d))
        .collect();
    assert!(!pair.gold.is_empty());
    for g in &pair.gold {
        let d = docs[g.doc_id.as_str()];
        let src: Vec<String> = d.l1[g.src_sent_id as usize]
            .text
            .split_whitespace()
            .map(|w| spec.word(w).unwrap())
            .collect();
        let tgt: Vec<&str> = d.l2[g.tgt_sent_id as usize].text.split_whitespace().collect();
        assert_eq!(src.len(), tgt.len());
        for (pos, t) in tgt.iter().enumerate() {
            let lo = pos.saturating_sub(spec.swap_window);
            let hi = (pos + spec.swap_window + 1).min(src.len());
            assert!(src[lo..hi].iter().any(|s| s == t));
        }
    }
}

#[test]
fn glyph_map_makes_vocabularies_disjoint() {
    let suite = gen_suite_with(&small(), 2, 5).unwrap();
    let c = &suite.pairs[0].comparable;
    let l1 = c.doc_pairs.iter().flat_map(|d| &d.l1);
    let l2 = c.doc_pairs.iter().flat_map(|d| &d.l2);
    assert_eq!(vocab_overlap(l1, l2).unwrap(), 0.0);

    let mut p = small();
    p.glyphs = false;
    p.shared_fraction = 0.5;
    let suite = gen_suite_with(&p, 2, 5).unwrap();
    let c = &suite.pairs[0].comparable;
    let vo = vocab_overlap(
        c.doc_pairs.iter().flat_map(|d| &d.l1),
        c.doc_pairs.iter().flat_map(|d| &d.l2),
    )
    .unwrap();
    assert!(vo > 10.0 && vo < 90.0, "{vo}");
}

#[test]
fn parallel_fraction_is_matched() {
    let mut p = small();
    p.n_docs = 1000;
    p.sents_per_doc = 4;
    for pf in [0.2, 0.5, 0.9] {
        p.parallel_fraction = pf;
        let suite = gen_suite_with(&p, 2, 8).unwrap();
        let rate = suite.pairs[0].gold.len() as f64 / 4000.0;
        assert!((rate - pf).abs() <= 0.02, "{pf}: {rate}");
    }
}

#[test]
fn held_out_references_are_exact_translations() {
    let suite = gen_suite_with(&small(), 3, 2).unwrap();
    for pair in &suite.pairs {
        let a = suite.langs.iter().position(|l| *l == pair.comparable.langs.0).unwrap();
        let b = suite.langs.iter().position(|l| *l == pair.comparable.langs.1).unwrap();
        for d in pair.dev.doc_pairs.iter().chain(&pair.test.doc_pairs) {
            let base = suite.ciphers[a].decipher(&d.l1[0].text).unwrap();
            assert_eq!(suite.ciphers[b].decipher(&d.l2[0].text).unwrap(), base);
        }
    }
}

#[test]
fn tiny_profile_size_contract() {
    let suite = gen_suite(Profile::Tiny, 2, 1).unwrap();
    assert_eq!(suite.pairs.len(), 1);
    assert_eq!(suite.pairs[0].comparable.doc_pairs.len(), 2000);
    assert!(!suite.pairs[0].gold.is_empty());
}

#[test]
fn three_languages_give_three_pairs() {
    let suite = gen_suite_with(&small(), 3, 1).unwrap();
    let names: Vec<String> = suite.pairs.iter().map(PairData::name).collect();
    assert_eq!(names, ["l0-l1", "l0-l2", "l1-l2"]);
    assert_eq!(suite.mono.len(), 3);
    assert!(suite.mono.iter().all(|m| m.len() == 50));
    assert!(gen_suite_with(&small(), 1, 1).is_err());
}

#[test]
fn written_suites_are_byte_identical() {
    let read_all = |dir: &std::path::Path| {
        let mut files = BTreeMap::new();
        for sub in ["", "comparable", "gold", "dev", "test", "lexicon", "mono"] {
            for e in std::fs::read_dir(dir.join(sub)).unwrap() {
                let p = e.unwrap().path();
                if p.is_file() {
                    files.insert(p.strip_prefix(dir).unwrap().to_owned(), std::fs::read(&p).unwrap());
                }
            }
        }
        files
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_suite_with(&small(), 3, 77).unwrap().write(d1.path()).unwrap();
    gen_suite_with(&small(), 3, 77).unwrap().write(d2.path()).unwrap();
    let (a, b) = (read_all(d1.path()), read_all(d2.path()));
    assert_eq!(a.len(), 3 * 5 + 3 + 1);
    assert_eq!(a, b);
    let c = crate::corpus::load_comparable(&d1.path().join("comparable/l0-l1.jsonl")).unwrap();
    assert_eq!(c.doc_pairs.len(), 30);
}
