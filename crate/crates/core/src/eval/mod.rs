//! BLEU with bootstrap confidence intervals, extraction precision/recall
//! against gold alignments, and summary reports.

mod report;

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use report::{emit_report, read_summary, SummaryRow, SUMMARY_HEADER};

use crate::corpus::GoldPair;
use crate::{seed, Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuResult {
    pub score: f64,
    /// Smoothed n-gram precisions as fractions, orders 1 to 4.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub sys_len: usize,
    pub ref_len: usize,
    pub ci: Option<(f64, f64)>,
}

/// Sufficient statistics of one segment (or a sum of segments).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub correct: [usize; MAX_ORDER],
    pub total: [usize; MAX_ORDER],
    pub sys_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn segment(hyp: &str, reference: &str) -> Self {
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let r: Vec<&str> = reference.split_whitespace().collect();
        let mut s = BleuStats {
            sys_len: h.len(),
            ref_len: r.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let mut ref_counts: HashMap<&[&str], usize> = HashMap::new();
            for g in r.windows(n) {
                *ref_counts.entry(g).or_default() += 1;
            }
            for g in h.windows(n) {
                if let Some(c) = ref_counts.get_mut(g) {
                    if *c > 0 {
                        *c -= 1;
                        s.correct[n - 1] += 1;
                    }
                }
            }
            s.total[n - 1] = h.len().saturating_sub(n - 1);
        }
        s
    }

    fn add(&mut self, o: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.correct[n] += o.correct[n];
            self.total[n] += o.total[n];
        }
        self.sys_len += o.sys_len;
        self.ref_len += o.ref_len;
    }

    /// Corpus BLEU with exponential smoothing: the k-th order with zero
    /// matches gets precision `1 / (2^k · total)`.
    pub fn score(&self) -> BleuResult {
        let mut precisions = [0.0f64; MAX_ORDER];
        let mut smooth = 1.0;
        for n in 0..MAX_ORDER {
            if self.total[n] == 0 {
                break;
            }
            precisions[n] = if self.correct[n] == 0 {
                smooth *= 2.0;
                100.0 / (smooth * self.total[n] as f64)
            } else {
                100.0 * self.correct[n] as f64 / self.total[n] as f64
            };
        }
        let bp = if self.sys_len < self.ref_len {
            if self.sys_len > 0 {
                (1.0 - self.ref_len as f64 / self.sys_len as f64).exp()
            } else {
                0.0
            }
        } else {
            1.0
        };
        let log = |p: f64| if p == 0.0 { -9_999_999_999.0 } else { p.ln() };
        let mean_log = precisions.iter().map(|&p| log(p)).sum::<f64>() / MAX_ORDER as f64;
        BleuResult {
            // exp(ln 100) overshoots by an ulp
            score: (bp * mean_log.exp()).min(100.0),
            precisions: precisions.map(|p| p / 100.0),
            brevity_penalty: bp,
            sys_len: self.sys_len,
            ref_len: self.ref_len,
            ci: None,
        }
    }
}

fn check_corpus(hyps: &[String], refs: &[String]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::Data(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Data("BLEU of an empty corpus".into()));
    }
    Ok(())
}

/// Corpus-level BLEU-4 on whitespace tokens (one reference per segment).
pub fn bleu(hyps: &[String], refs: &[String]) -> Result<BleuResult> {
    check_corpus(hyps, refs)?;
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&BleuStats::segment(h, r));
    }
    Ok(total.score())
}

/// Percentile bootstrap interval of corpus BLEU over `n_resamples`
/// resamples of the segments (with replacement). `p` is the coverage in
/// percent.
pub fn bootstrap_ci(
    hyps: &[String],
    refs: &[String],
    n_resamples: usize,
    p: f64,
    seed_value: u64,
) -> Result<(f64, f64)> {
    check_corpus(hyps, refs)?;
    if hyps.len() < 2 {
        return Err(Error::Data("bootstrap needs at least 2 segments".into()));
    }
    if n_resamples < 10 {
        return Err(Error::Config(format!(
            "n_resamples must be at least 10, got {n_resamples}"
        )));
    }
    if !(0.0 < p && p < 100.0) {
        return Err(Error::Config(format!("coverage {p} outside (0, 100)")));
    }
    let stats: Vec<BleuStats> = hyps.iter().zip(refs).map(|(h, r)| BleuStats::segment(h, r)).collect();
    let mut rng = seed::rng(seed_value, "bootstrap", 0);
    let mut scores: Vec<f64> = (0..n_resamples)
        .map(|_| {
            let mut t = BleuStats::default();
            for _ in 0..stats.len() {
                t.add(&stats[rng.gen_range(0..stats.len())]);
            }
            t.score().score
        })
        .collect();
    scores.sort_by(f64::total_cmp);
    let tail = (100.0 - p) / 200.0;
    let lo = ((tail * n_resamples as f64) as usize).min(n_resamples - 1);
    let hi = (((1.0 - tail) * n_resamples as f64) as usize).min(n_resamples - 1);
    Ok((scores[lo], scores[hi]))
}

/// BLEU with a 95% bootstrap interval (1000 resamples) when the corpus has
/// at least two segments.
pub fn bleu_with_ci(hyps: &[String], refs: &[String], seed_value: u64) -> Result<BleuResult> {
    let mut r = bleu(hyps, refs)?;
    if hyps.len() >= 2 {
        r.ci = Some(bootstrap_ci(hyps, refs, 1000, 95.0, seed_value)?);
    }
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_accepted: usize,
    pub n_gold: usize,
}

/// Precision and recall of `accepted` against `gold`.
///
/// With nothing accepted, precision is 0; with an empty gold set, recall is
/// 1; both empty gives P = R = 1.
pub fn extraction_prf(accepted: &BTreeSet<GoldPair>, gold: &BTreeSet<GoldPair>) -> ExtractionPrf {
    let hit = accepted.intersection(gold).count() as f64;
    let (na, ng) = (accepted.len(), gold.len());
    if na == 0 && ng == 0 {
        log::info!("extraction scored against an empty gold set with nothing accepted");
    }
    let precision = if na == 0 {
        if ng == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        hit / na as f64
    };
    let recall = if ng == 0 { 1.0 } else { hit / ng as f64 };
    let f1 = if precision == 0.0 || recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ExtractionPrf {
        precision,
        recall,
        f1,
        n_accepted: na,
        n_gold: ng,
    }
}

#[cfg(test)]
mod tests;
