use nalgebra::DMatrix;

use super::{EmbeddingSet, SeedLexicon};
use crate::nn::Mat;
use crate::{Error, Result};

pub const MIN_LEXICON: usize = 20;

/// An orthogonal map and how well-posed its estimation was.
#[derive(Clone, Debug, PartialEq)]
pub struct Mapping {
    /// `dim × dim`, applied as `x · w`.
    pub w: Mat<f64>,
    /// Number of non-negligible singular values of `XᵀY`.
    pub rank: usize,
    pub entries_used: usize,
}

impl Mapping {
    pub fn is_degenerate(&self) -> bool {
        self.rank < self.w.rows()
    }

    /// `max |WᵀW − I|`.
    pub fn orthogonality_residual(&self) -> f64 {
        let n = self.w.rows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| self.w.get(k, i) * self.w.get(k, j)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }
}

/// `argmin_W ‖XW − Y‖_F` over orthogonal `W`, via the SVD `XᵀY = UΣVᵀ`,
/// `W = UVᵀ`. Rows of `x` and `y` are paired.
pub fn procrustes(x: &Mat<f64>, y: &Mat<f64>) -> Mapping {
    let d = x.cols();
    let xm = DMatrix::from_row_slice(x.rows(), d, x.data());
    let ym = DMatrix::from_row_slice(y.rows(), d, y.data());
    let m = xm.transpose() * ym;
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let top = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > top.max(1e-300) * 1e-9)
        .count();
    let w = u * vt;
    Mapping {
        w: Mat::from_fn(d, d, |i, j| w[(i, j)]),
        rank,
        entries_used: x.rows(),
    }
}

/// Maps `src` into the space of `tgt` using the seed lexicon. Entries whose
/// tokens lack a vector on either side are skipped.
pub fn map_embeddings(
    src: &EmbeddingSet,
    tgt: &EmbeddingSet,
    lexicon: &SeedLexicon,
) -> Result<(EmbeddingSet, Mapping)> {
    if src.dim() != tgt.dim() {
        return Err(Error::Shape(format!(
            "cannot map {}-dim embeddings onto {}-dim ones",
            src.dim(),
            tgt.dim()
        )));
    }
    let pairs: Vec<(usize, usize)> = lexicon
        .entries
        .iter()
        .filter_map(|&(a, b)| Some((src.row_of(a)?, tgt.row_of(b)?)))
        .collect();
    if pairs.len() < MIN_LEXICON {
        return Err(Error::Data(format!(
            "seed lexicon has {} usable entries, need at least {MIN_LEXICON}",
            pairs.len()
        )));
    }
    let d = src.dim();
    let x = Mat::from_fn(pairs.len(), d, |i, j| src.matrix.get(pairs[i].0, j) as f64);
    let y = Mat::from_fn(pairs.len(), d, |i, j| tgt.matrix.get(pairs[i].1, j) as f64);
    let mapping = procrustes(&x, &y);
    if mapping.is_degenerate() {
        log::warn!(
            "seed lexicon spans only {} of {d} directions; the mapping is not unique",
            mapping.rank
        );
    }
    let mut out = src.clone();
    for r in 0..out.matrix.rows() {
        let row: Vec<f64> = src.matrix.row(r).iter().map(|&v| v as f64).collect();
        for j in 0..d {
            let v: f64 = (0..d).map(|k| row[k] * mapping.w.get(k, j)).sum();
            out.matrix.row_mut(r)[j] = v as f32;
        }
    }
    Ok((out, mapping))
}
