//! Row-wise kernels shared by the training tape and the inference path.

use super::{Mat, Scalar};

pub const LN_EPS: f64 = 1e-5;

/// Normalizes one row in place to zero mean / unit variance, returning the
/// reciprocal standard deviation.
#[inline]
pub fn normalize_row<T: Scalar>(row: &mut [T]) -> T {
    let n = T::of(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let rstd = T::one() / (var + T::of(LN_EPS)).sqrt();
    for x in row.iter_mut() {
        *x = (*x - mean) * rstd;
    }
    rstd
}

/// `y = gain ∘ normalize(x) + bias`, row by row.
pub fn layer_norm<T: Scalar>(x: &Mat<T>, gain: &[T], bias: &[T]) -> Mat<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        normalize_row(row);
        for ((y, &g), &b) in row.iter_mut().zip(gain).zip(bias) {
            *y = *y * g + b;
        }
    }
    out
}

/// Numerically stable in-place softmax; returns log-sum-exp of the input.
#[inline]
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
    max + sum.ln()
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Sinusoidal position encodings for positions `0..len`.
pub fn positions<T: Scalar>(len: usize, dim: usize) -> Mat<T> {
    Mat::from_fn(len, dim, |pos, i| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one_and_returns_lse() {
        let mut row = vec![1.0f64, 2.0, 3.0];
        let lse = softmax_in_place(&mut row);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let want = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        assert!((lse - want).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }
}
