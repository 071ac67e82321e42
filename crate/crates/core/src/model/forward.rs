//! Graph construction for the pre-norm encoder-decoder on a [`Tape`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layout::{CrossAttn, FeedForward, Layout, Norm, SelfAttn};
use super::ModelConfig;
use crate::corpus::TokenId;
use crate::nn::{Mat, Scalar, Segment, Tape, Var};

/// Dropout mask source; inactive at inference time.
pub(crate) struct Dropper {
    rng: Option<ChaCha8Rng>,
    p: f64,
}

impl Dropper {
    pub fn off() -> Self {
        Dropper { rng: None, p: 0.0 }
    }

    pub fn new(p: f64, rng: ChaCha8Rng) -> Self {
        if p > 0.0 {
            Dropper { rng: Some(rng), p }
        } else {
            Self::off()
        }
    }

    fn apply<T: Scalar>(&mut self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        let Some(rng) = self.rng.as_mut() else { return x };
        let n = tape.value(x).data().len();
        let keep = T::of(1.0 / (1.0 - self.p));
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < self.p { T::zero() } else { keep })
            .collect();
        tape.dropout(x, mask)
    }
}

pub(crate) fn segments(seqs: &[&[TokenId]]) -> Vec<Segment> {
    let mut start = 0;
    seqs.iter()
        .map(|s| {
            let seg = Segment { start, len: s.len() };
            start += s.len();
            seg
        })
        .collect()
}

pub(crate) struct Graph<'a, T: Scalar> {
    pub cfg: &'a ModelConfig,
    pub layout: &'a Layout,
    pub pos: &'a Mat<T>,
}

impl<'a, T: Scalar> Graph<'a, T> {
    fn norm(&self, tape: &mut Tape<'_, T>, x: Var, n: Norm) -> Var {
        let g = tape.param(n.gain);
        let b = tape.param(n.bias);
        tape.layer_norm(x, g, b)
    }

    /// Scaled token embeddings plus sinusoidal positions.
    fn embed(&self, tape: &mut Tape<'_, T>, seqs: &[&[TokenId]]) -> Var {
        let ids: Vec<u32> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
        let table = tape.param(self.layout.embed);
        let scale = T::of((self.cfg.d_model as f64).sqrt());
        let x = tape.gather(table, &ids, scale);
        let d = self.cfg.d_model;
        let mut pos = Mat::zeros(ids.len(), d);
        let mut r = 0;
        for s in seqs {
            for p in 0..s.len() {
                pos.row_mut(r).copy_from_slice(self.pos.row(p));
                r += 1;
            }
        }
        let pos = tape.constant(pos);
        tape.add(x, pos)
    }

    fn self_attn(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        p: &SelfAttn,
        segs: &[Segment],
        causal: bool,
        drop: &mut Dropper,
    ) -> Var {
        let d = self.cfg.d_model;
        let h = self.norm(tape, x, p.norm);
        let (w, b) = (tape.param(p.w_qkv), tape.param(p.b_qkv));
        let qkv = tape.linear(h, w, Some(b));
        let a = tape.attention(
            qkv.at(0),
            qkv.at(d),
            qkv.at(2 * d),
            d,
            self.cfg.n_heads,
            segs,
            segs,
            causal,
        );
        let (w, b) = (tape.param(p.w_out), tape.param(p.b_out));
        let a = tape.linear(a, w, Some(b));
        let a = drop.apply(tape, a);
        tape.add(x, a)
    }

    #[allow(clippy::too_many_arguments)]
    fn cross_attn(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        memory: Var,
        p: &CrossAttn,
        q_segs: &[Segment],
        m_segs: &[Segment],
        drop: &mut Dropper,
    ) -> Var {
        let d = self.cfg.d_model;
        let h = self.norm(tape, x, p.norm);
        let (w, b) = (tape.param(p.w_q), tape.param(p.b_q));
        let q = tape.linear(h, w, Some(b));
        let (w, b) = (tape.param(p.w_kv), tape.param(p.b_kv));
        let kv = tape.linear(memory, w, Some(b));
        let a = tape.attention(q.at(0), kv.at(0), kv.at(d), d, self.cfg.n_heads, q_segs, m_segs, false);
        let (w, b) = (tape.param(p.w_out), tape.param(p.b_out));
        let a = tape.linear(a, w, Some(b));
        let a = drop.apply(tape, a);
        tape.add(x, a)
    }

    fn feed_forward(&self, tape: &mut Tape<'_, T>, x: Var, p: &FeedForward, drop: &mut Dropper) -> Var {
        let h = self.norm(tape, x, p.norm);
        let (w, b) = (tape.param(p.w1), tape.param(p.b1));
        let h = tape.linear(h, w, Some(b));
        let h = tape.relu(h);
        let (w, b) = (tape.param(p.w2), tape.param(p.b2));
        let h = tape.linear(h, w, Some(b));
        let h = drop.apply(tape, h);
        tape.add(x, h)
    }

    /// Encoder outputs for packed source sequences.
    pub fn encode(&self, tape: &mut Tape<'_, T>, src: &[&[TokenId]], drop: &mut Dropper) -> (Var, Vec<Segment>) {
        let segs = segments(src);
        let mut x = self.embed(tape, src);
        x = drop.apply(tape, x);
        for layer in &self.layout.enc {
            x = self.self_attn(tape, x, &layer.attn, &segs, false, drop);
            x = self.feed_forward(tape, x, &layer.ff, drop);
        }
        (self.norm(tape, x, self.layout.enc_norm), segs)
    }

    /// Final decoder states for teacher-forced target prefixes.
    pub fn decode(
        &self,
        tape: &mut Tape<'_, T>,
        memory: Var,
        m_segs: &[Segment],
        tgt_in: &[&[TokenId]],
        drop: &mut Dropper,
    ) -> Var {
        let segs = segments(tgt_in);
        let mut y = self.embed(tape, tgt_in);
        y = drop.apply(tape, y);
        for layer in &self.layout.dec {
            y = self.self_attn(tape, y, &layer.attn, &segs, true, drop);
            y = self.cross_attn(tape, y, memory, &layer.cross, &segs, m_segs, drop);
            y = self.feed_forward(tape, y, &layer.ff, drop);
        }
        self.norm(tape, y, self.layout.dec_norm)
    }

    pub fn logits(&self, tape: &mut Tape<'_, T>, hidden: Var) -> Var {
        let table = tape.param(self.layout.output_table());
        let z = tape.matmul_t(hidden, table);
        let b = tape.param(self.layout.out_bias);
        tape.add_row(z, b)
    }
}
