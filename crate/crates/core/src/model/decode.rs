//! Incremental (KV-cached) decoding used for greedy translation.

use super::forward::{Dropper, Graph};
use super::layout::Norm;
use super::Model;
use crate::corpus::{special, TokenId};
use crate::nn::{argmax, dot, gemm, layer_norm, softmax_in_place, Mat, Scalar, Segment, Tape};

/// Decoder state for a batch of source sentences. Each sentence keeps its own
/// self-attention cache, so sentences can finish at different steps.
pub(crate) struct Incremental<'m, T: Scalar> {
    model: &'m Model<T>,
    mem_segs: Vec<Segment>,
    /// Per decoder layer: `memory·W_kv + b_kv`, packed like the memory.
    cross_kv: Vec<Mat<T>>,
    /// `[layer][sentence]` → (keys, values), row-major with `d_model` columns.
    cache: Vec<Vec<(Vec<T>, Vec<T>)>>,
}

fn affine<T: Scalar>(x: &Mat<T>, w: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    let mut out = Mat::zeros(x.rows(), w.cols());
    for r in 0..out.rows() {
        out.row_mut(r).copy_from_slice(b.data());
    }
    gemm(T::one(), x.view(), w.view(), T::one(), out.view_mut());
    out
}

impl<'m, T: Scalar> Incremental<'m, T> {
    pub fn new(model: &'m Model<T>, srcs: &[&[TokenId]]) -> Self {
        let graph = Graph {
            cfg: &model.config,
            layout: &model.layout,
            pos: &model.pos,
        };
        let mut tape = Tape::new(&model.params);
        let (mem, mem_segs) = graph.encode(&mut tape, srcs, &mut Dropper::off());
        let memory = tape.value(mem);
        let p = &model.params;
        let cross_kv = model
            .layout
            .dec
            .iter()
            .map(|l| affine(memory, p.get(l.cross.w_kv), p.get(l.cross.b_kv)))
            .collect();
        let cache = model
            .layout
            .dec
            .iter()
            .map(|_| vec![(Vec::new(), Vec::new()); srcs.len()])
            .collect();
        Incremental {
            model,
            mem_segs,
            cross_kv,
            cache,
        }
    }

    fn norm(&self, x: &Mat<T>, n: Norm) -> Mat<T> {
        let p = &self.model.params;
        layer_norm(x, p.get(n.gain).data(), p.get(n.bias).data())
    }

    /// Feeds one token for each sentence in `rows`; returns next-token logits
    /// (`rows.len() × vocab`).
    pub fn step(&mut self, rows: &[usize], tokens: &[TokenId]) -> Mat<T> {
        assert_eq!(rows.len(), tokens.len());
        let model = self.model;
        let cfg = &model.config;
        let p = &model.params;
        let d = cfg.d_model;
        let heads = cfg.n_heads;
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let emb_scale = T::of((d as f64).sqrt());

        let table = p.get(model.layout.embed);
        let mut x = Mat::zeros(rows.len(), d);
        for (i, (&s, &tok)) in rows.iter().zip(tokens).enumerate() {
            let pos = self.cache[0][s].0.len() / d;
            let prow = model.pos.row(pos);
            for ((o, &e), &pp) in x.row_mut(i).iter_mut().zip(table.row(tok as usize)).zip(prow) {
                *o = e * emb_scale + pp;
            }
        }

        let mut ctx = vec![T::zero(); d];
        for (li, layer) in model.layout.dec.iter().enumerate() {
            // causal self-attention over the cache
            let h = self.norm(&x, layer.attn.norm);
            let qkv = affine(&h, p.get(layer.attn.w_qkv), p.get(layer.attn.b_qkv));
            let mut att = Mat::zeros(rows.len(), d);
            for (i, &s) in rows.iter().enumerate() {
                let row = qkv.row(i);
                let (keys, vals) = &mut self.cache[li][s];
                keys.extend_from_slice(&row[d..2 * d]);
                vals.extend_from_slice(&row[2 * d..3 * d]);
                let n = keys.len() / d;
                attend(&row[..d], keys, vals, 0, n, d, heads, scale, &mut ctx);
                att.row_mut(i).copy_from_slice(&ctx);
            }
            let a = affine(&att, p.get(layer.attn.w_out), p.get(layer.attn.b_out));
            x.add_assign(&a);

            // cross-attention over the source memory
            let h = self.norm(&x, layer.cross.norm);
            let q = affine(&h, p.get(layer.cross.w_q), p.get(layer.cross.b_q));
            let kv = &self.cross_kv[li];
            let mut att = Mat::zeros(rows.len(), d);
            for (i, &s) in rows.iter().enumerate() {
                let seg = self.mem_segs[s];
                let stride = 2 * d;
                let block = &kv.data()[seg.start * stride..(seg.start + seg.len) * stride];
                attend_strided(q.row(i), block, seg.len, d, heads, scale, &mut ctx);
                att.row_mut(i).copy_from_slice(&ctx);
            }
            let a = affine(&att, p.get(layer.cross.w_out), p.get(layer.cross.b_out));
            x.add_assign(&a);

            // feed-forward
            let h = self.norm(&x, layer.ff.norm);
            let mut f = affine(&h, p.get(layer.ff.w1), p.get(layer.ff.b1));
            f.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
            let f = affine(&f, p.get(layer.ff.w2), p.get(layer.ff.b2));
            x.add_assign(&f);
        }
        let out = self.norm(&x, model.layout.dec_norm);
        let proj = p.get(model.layout.output_table());
        let mut logits = Mat::zeros(rows.len(), cfg.vocab_size);
        for r in 0..logits.rows() {
            logits.row_mut(r).copy_from_slice(p.get(model.layout.out_bias).data());
        }
        gemm(T::one(), out.view(), proj.view().t(), T::one(), logits.view_mut());
        logits
    }
}

/// Attention of one query over `n` contiguous key/value rows of width `d`.
#[allow(clippy::too_many_arguments)]
fn attend<T: Scalar>(
    q: &[T],
    keys: &[T],
    vals: &[T],
    first: usize,
    n: usize,
    d: usize,
    heads: usize,
    scale: T,
    out: &mut [T],
) {
    let dh = d / heads;
    let mut w = vec![T::zero(); n];
    for h in 0..heads {
        let qh = &q[h * dh..(h + 1) * dh];
        for (j, wj) in w.iter_mut().enumerate() {
            let k = &keys[(first + j) * d + h * dh..(first + j) * d + (h + 1) * dh];
            *wj = dot(qh, k) * scale;
        }
        softmax_in_place(&mut w);
        let o = &mut out[h * dh..(h + 1) * dh];
        o.iter_mut().for_each(|x| *x = T::zero());
        for (j, &wj) in w.iter().enumerate() {
            let v = &vals[(first + j) * d + h * dh..(first + j) * d + (h + 1) * dh];
            for (x, &vv) in o.iter_mut().zip(v) {
                *x += wj * vv;
            }
        }
    }
}

/// Like [`attend`] but keys and values interleaved per row as `[k | v]`.
fn attend_strided<T: Scalar>(q: &[T], kv: &[T], n: usize, d: usize, heads: usize, scale: T, out: &mut [T]) {
    let dh = d / heads;
    let stride = 2 * d;
    let mut w = vec![T::zero(); n];
    for h in 0..heads {
        let qh = &q[h * dh..(h + 1) * dh];
        for (j, wj) in w.iter_mut().enumerate() {
            let k = &kv[j * stride + h * dh..j * stride + (h + 1) * dh];
            *wj = dot(qh, k) * scale;
        }
        softmax_in_place(&mut w);
        let o = &mut out[h * dh..(h + 1) * dh];
        o.iter_mut().for_each(|x| *x = T::zero());
        for (j, &wj) in w.iter().enumerate() {
            let v = &kv[j * stride + d + h * dh..j * stride + d + (h + 1) * dh];
            for (x, &vv) in o.iter_mut().zip(v) {
                *x += wj * vv;
            }
        }
    }
}

/// Greedy argmax decoding until EOS or `max_out[i]` tokens (EOS excluded).
pub(crate) fn greedy<T: Scalar>(model: &Model<T>, srcs: &[&[TokenId]], max_out: &[usize]) -> Vec<Vec<TokenId>> {
    let mut outputs: Vec<Vec<TokenId>> = vec![Vec::new(); srcs.len()];
    if srcs.is_empty() {
        return outputs;
    }
    let mut dec = Incremental::new(model, srcs);
    let mut active: Vec<usize> = (0..srcs.len()).filter(|&i| max_out[i] > 0).collect();
    let mut last: Vec<TokenId> = vec![special::BOS; active.len()];
    // The decoder never sees more than max_len positions.
    let cap = model.config.max_len.saturating_sub(1);
    while !active.is_empty() {
        let logits = dec.step(&active, &last);
        let mut next_active = Vec::with_capacity(active.len());
        let mut next_last = Vec::with_capacity(active.len());
        for (i, &s) in active.iter().enumerate() {
            let tok = argmax(logits.row(i)) as TokenId;
            if tok == special::EOS {
                continue;
            }
            outputs[s].push(tok);
            if outputs[s].len() < max_out[s] && outputs[s].len() < cap {
                next_active.push(s);
                next_last.push(tok);
            }
        }
        active = next_active;
        last = next_last;
    }
    outputs
}
