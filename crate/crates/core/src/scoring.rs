//! Sentence representations, ratio-margin scoring and mutual-argmax
//! sentence pair extraction.

use serde::{Deserialize, Serialize};

use crate::corpus::TaggedSentence;
use crate::model::Model;
use crate::nn::{argmax, Mat, Scalar};
use crate::{Error, Result};

/// Two views of a sentence: summed embeddings and summed encoder outputs.
/// Language tags are excluded from both sums.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceRepr {
    pub sw: Vec<f32>,
    pub se: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarginConfig {
    pub k: usize,
    pub cosine_floor: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            k: 4,
            cosine_floor: 0.0,
        }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("margin k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Accepted,
    NotMutualArgmaxSw,
    NotMutualArgmaxSe,
    EmptyRepr,
}

/// Verdict for the candidate pair `(src, tgt)`.
///
/// `scores` holds `[sw_fwd, sw_bwd, se_fwd, se_bwd]`. The ratio margin is
/// symmetric in its two arguments, so forward and backward values coincide;
/// the directions differ in which argmax they must win.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceDecision {
    pub src: usize,
    pub tgt: usize,
    pub scores: [f64; 4],
    pub accepted: bool,
    pub reason: Reason,
}

/// Output of [`select`]: accepted pairs plus the sentences left over.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extraction {
    pub accepted: Vec<AcceptanceDecision>,
    /// One decision per L1 sentence, for its best sw candidate.
    pub decisions: Vec<AcceptanceDecision>,
    pub rejected_l1: Vec<usize>,
    pub rejected_l2: Vec<usize>,
}

fn is_zero(v: &[f32]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

/// Cosine similarity, or `floor` when either vector is zero.
pub fn cosine(x: &[f32], y: &[f32], floor: f64) -> f64 {
    let (mut xy, mut xx, mut yy) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (a as f64, b as f64);
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    if xx == 0.0 || yy == 0.0 {
        return floor;
    }
    xy / (xx.sqrt() * yy.sqrt())
}

fn mean_top_k(mut sims: Vec<f64>, k: usize) -> f64 {
    let k = k.min(sims.len());
    sims.sort_unstable_by(|a, b| b.total_cmp(a));
    sims[..k].iter().sum::<f64>() / k as f64
}

fn ratio(c: f64, nx: f64, ny: f64) -> f64 {
    let denom = nx / 2.0 + ny / 2.0;
    if denom.abs() < 1e-12 {
        0.0
    } else {
        c / denom
    }
}

/// Ratio margin of `(x, y)`: their cosine divided by the mean of the
/// average cosine of `x` to its k nearest neighbours in `pool_y` and of `y`
/// to its k nearest neighbours in `pool_x`.
pub fn margin_score(x: &[f32], y: &[f32], pool_x: &[&[f32]], pool_y: &[&[f32]], cfg: &MarginConfig) -> Result<f64> {
    if pool_x.is_empty() || pool_y.is_empty() {
        return Err(Error::Data("margin score needs non-empty pools".into()));
    }
    let f = cfg.cosine_floor;
    let nx = mean_top_k(pool_y.iter().map(|z| cosine(x, z, f)).collect(), cfg.k);
    let ny = mean_top_k(pool_x.iter().map(|z| cosine(y, z, f)).collect(), cfg.k);
    Ok(ratio(cosine(x, y, f), nx, ny))
}

/// All pairwise margins between `xs` (rows) and `ys` (columns), each side
/// serving as the other's neighbourhood pool.
pub fn margin_matrix(xs: &[&[f32]], ys: &[&[f32]], cfg: &MarginConfig) -> Result<Mat<f64>> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Data("margin score needs non-empty pools".into()));
    }
    let f = cfg.cosine_floor;
    let cos = Mat::from_fn(xs.len(), ys.len(), |i, j| cosine(xs[i], ys[j], f));
    let nx: Vec<f64> = (0..xs.len()).map(|i| mean_top_k(cos.row(i).to_vec(), cfg.k)).collect();
    let ny: Vec<f64> = (0..ys.len())
        .map(|j| mean_top_k((0..xs.len()).map(|i| cos.get(i, j)).collect(), cfg.k))
        .collect();
    Ok(Mat::from_fn(xs.len(), ys.len(), |i, j| {
        ratio(cos.get(i, j), nx[i], ny[j])
    }))
}

fn sws(r: &[SentenceRepr]) -> Vec<&[f32]> {
    r.iter().map(|x| x.sw.as_slice()).collect()
}

fn ses(r: &[SentenceRepr]) -> Vec<&[f32]> {
    r.iter().map(|x| x.se.as_slice()).collect()
}

fn col_argmax(m: &Mat<f64>, j: usize) -> usize {
    let col: Vec<f64> = (0..m.rows()).map(|i| m.get(i, j)).collect();
    argmax(&col)
}

/// Mutual-argmax extraction over two sides of a document.
///
/// `(i, j)` is accepted iff, under both representations, `j` is the best
/// target for `i` and `i` is the best source for `j` (lowest index wins
/// ties), and neither sentence has an all-zero representation.
pub fn select(l1: &[SentenceRepr], l2: &[SentenceRepr], cfg: &MarginConfig) -> Result<Extraction> {
    cfg.validate()?;
    if l1.is_empty() || l2.is_empty() {
        return Err(Error::Data("extraction needs sentences on both sides".into()));
    }
    let sw = margin_matrix(&sws(l1), &sws(l2), cfg)?;
    let se = margin_matrix(&ses(l1), &ses(l2), cfg)?;

    let mut out = Extraction::default();
    let mut taken2 = vec![false; l2.len()];
    let mut taken1 = vec![false; l1.len()];
    for i in 0..l1.len() {
        let j = argmax(sw.row(i));
        let (s, e) = (sw.get(i, j), se.get(i, j));
        let reason = if [&l1[i].sw, &l1[i].se, &l2[j].sw, &l2[j].se].iter().any(|v| is_zero(v)) {
            Reason::EmptyRepr
        } else if col_argmax(&sw, j) != i {
            Reason::NotMutualArgmaxSw
        } else if argmax(se.row(i)) != j || col_argmax(&se, j) != i {
            Reason::NotMutualArgmaxSe
        } else {
            Reason::Accepted
        };
        let d = AcceptanceDecision {
            src: i,
            tgt: j,
            scores: [s, s, e, e],
            accepted: reason == Reason::Accepted,
            reason,
        };
        if d.accepted {
            taken1[i] = true;
            taken2[j] = true;
            out.accepted.push(d.clone());
        }
        out.decisions.push(d);
    }
    out.rejected_l1 = (0..l1.len()).filter(|&i| !taken1[i]).collect();
    out.rejected_l2 = (0..l2.len()).filter(|&j| !taken2[j]).collect();
    Ok(out)
}

/// Representations of many sentences, encoded in chunks.
pub fn represent_many<T: Scalar>(model: &Model<T>, sentences: &[&TaggedSentence]) -> Result<Vec<SentenceRepr>> {
    const CHUNK: usize = 256;
    let d = model.config().d_model;
    let emb = model.embeddings();
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(CHUNK) {
        let ids: Vec<Vec<u32>> = chunk.iter().map(|s| s.ids()).collect();
        let refs: Vec<&[u32]> = ids.iter().map(Vec::as_slice).collect();
        let states = model.encode_batch(&refs)?;
        for (s, h) in chunk.iter().zip(states) {
            let mut sw = vec![0f64; d];
            for &t in &s.tokens {
                for (a, &v) in sw.iter_mut().zip(emb.row(t as usize)) {
                    *a += v.as_f64();
                }
            }
            let mut se = vec![0f64; d];
            for r in 2..h.rows() {
                for (a, &v) in se.iter_mut().zip(h.row(r)) {
                    *a += v.as_f64();
                }
            }
            out.push(SentenceRepr {
                sw: sw.into_iter().map(|x| x as f32).collect(),
                se: se.into_iter().map(|x| x as f32).collect(),
            });
        }
    }
    Ok(out)
}

pub fn represent<T: Scalar>(model: &Model<T>, sentence: &TaggedSentence) -> Result<SentenceRepr> {
    Ok(represent_many(model, &[sentence])?.pop().expect("one output"))
}

/// Scores one document pair with the current model.
pub fn extract_pairs<T: Scalar>(
    model: &Model<T>,
    l1: &[TaggedSentence],
    l2: &[TaggedSentence],
    cfg: &MarginConfig,
) -> Result<Extraction> {
    let all: Vec<&TaggedSentence> = l1.iter().chain(l2).collect();
    let mut reps = represent_many(model, &all)?;
    let r2 = reps.split_off(l1.len());
    select(&reps, &r2, cfg)
}

/// One line of the mined-pairs TSV.
pub fn tsv_line(d: &AcceptanceDecision, src_text: &str, tgt_text: &str) -> String {
    let [a, b, c, e] = d.scores;
    format!("{a:.6}\t{b:.6}\t{c:.6}\t{e:.6}\t{src_text}\t{tgt_text}")
}

pub const TSV_HEADER: &str = "score_sw_fwd\tscore_sw_bwd\tscore_se_fwd\tscore_se_bwd\tsrc_text\ttgt_text";

#[cfg(test)]
mod tests;
