use super::kernels::{normalize_row, softmax_in_place};
use super::mat::{gemm, Mat, MatMut, MatRef};
use super::params::{ParamId, ParamSet};
use super::Scalar;

/// Node handle on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// A column block `[col, col + width)` of a node, used to feed fused
/// projections (e.g. one `d×3d` QKV matmul) into attention without copies.
#[derive(Clone, Copy, Debug)]
pub struct Slot {
    pub var: Var,
    pub col: usize,
}

impl Var {
    pub fn at(self, col: usize) -> Slot {
        Slot { var: self, col }
    }
}

/// Rows `[start, start + len)` belonging to one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

enum Value<T> {
    Owned(Mat<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Gather {
        table: Var,
        ids: Vec<u32>,
        scale: T,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMulT {
        x: Var,
        w: Var,
    },
    AddRow {
        x: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat<T>,
        rstd: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Attention(Box<AttnRecord<T>>),
    CrossEntropy {
        logits: Var,
        targets: Vec<u32>,
        smoothing: T,
        probs: Mat<T>,
        row_losses: Vec<T>,
    },
}

struct AttnRecord<T> {
    q: Slot,
    k: Slot,
    v: Slot,
    width: usize,
    heads: usize,
    q_segs: Vec<Segment>,
    k_segs: Vec<Segment>,
    /// Softmax weights per (segment, head), row-major `Lq×Lk`.
    probs: Vec<Vec<T>>,
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
}

/// Gradients for every parameter touched by a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Mat<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn into_vec(self) -> Vec<Option<Mat<T>>> {
        self.grads
    }

    pub fn sq_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter())
            .map(|x| x.as_f64() * x.as_f64())
            .sum()
    }
}

/// Reverse-mode autodiff recording over a borrowed parameter set.
pub struct Tape<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.params.get(*id),
        }
    }

    /// Rows of `table` selected by `ids`, multiplied by `scale`.
    pub fn gather(&mut self, table: Var, ids: &[u32], scale: T) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            for (o, &x) in out.row_mut(r).iter_mut().zip(t.row(id as usize)) {
                *o = x * scale;
            }
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                scale,
            },
        )
    }

    /// `x·w + b` with `w` stored `in×out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = Mat::zeros(xv.rows(), wv.cols());
        if let Some(b) = b {
            let bias = self.value(b).data();
            for r in 0..out.rows() {
                out.row_mut(r).copy_from_slice(bias);
            }
            gemm(T::one(), xv.view(), wv.view(), T::one(), out.view_mut());
        } else {
            gemm(T::one(), xv.view(), wv.view(), T::zero(), out.view_mut());
        }
        self.push(out, Op::Linear { x, w, b })
    }

    /// `x·wᵀ`; used for the output projection tied to the embedding table.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = Mat::zeros(xv.rows(), wv.rows());
        gemm(T::one(), xv.view(), wv.view().t(), T::zero(), out.view_mut());
        self.push(out, Op::MatMulT { x, w })
    }

    /// Adds the `1×n` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let mut out = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for r in 0..out.rows() {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(&bias) {
                *o += bb;
            }
        }
        self.push(out, Op::AddRow { x, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add { a, b })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        self.push(out, Op::Relu { x })
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let mut xhat = self.value(x).clone();
        let mut rstd = Vec::with_capacity(xhat.rows());
        for r in 0..xhat.rows() {
            rstd.push(normalize_row(xhat.row_mut(r)));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = xhat.clone();
        for r in 0..out.rows() {
            for ((o, &gg), &bb) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gg + bb;
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Inverted dropout with a precomputed keep mask (`0` or `1/(1-p)`).
    pub fn dropout(&mut self, x: Var, mask: Vec<T>) -> Var {
        let mut out = self.value(x).clone();
        assert_eq!(mask.len(), out.data().len());
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x, mask })
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// Query segment `i` attends to key segment `i`. With `causal`, query row
    /// `r` of a segment only sees key rows `0..=r` of the same segment.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Slot,
        k: Slot,
        v: Slot,
        width: usize,
        heads: usize,
        q_segs: &[Segment],
        k_segs: &[Segment],
        causal: bool,
    ) -> Var {
        assert_eq!(q_segs.len(), k_segs.len());
        assert_eq!(width % heads, 0);
        let dh = width / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let qv = self.value(q.var);
        let kv = self.value(k.var);
        let vv = self.value(v.var);
        let mut out = Mat::zeros(qv.rows(), width);
        let mut probs = Vec::with_capacity(q_segs.len() * heads);
        for (qs, ks) in q_segs.iter().zip(k_segs) {
            if causal {
                assert_eq!(qs.len, ks.len, "causal attention needs square segments");
            }
            for h in 0..heads {
                let qh = qv.col_block(q.col + h * dh, dh).rows_range(qs.start, qs.len);
                let kh = kv.col_block(k.col + h * dh, dh).rows_range(ks.start, ks.len);
                let vh = vv.col_block(v.col + h * dh, dh).rows_range(ks.start, ks.len);
                let mut p = vec![T::zero(); qs.len * ks.len];
                gemm(scale, qh, kh.t(), T::zero(), MatMut::new(&mut p, qs.len, ks.len));
                for i in 0..qs.len {
                    let row = &mut p[i * ks.len..(i + 1) * ks.len];
                    if causal {
                        row[i + 1..].iter_mut().for_each(|x| *x = T::neg_infinity());
                    }
                    softmax_in_place(row);
                }
                gemm(
                    T::one(),
                    MatRef::new(&p, qs.len, ks.len),
                    vh,
                    T::zero(),
                    out.col_block_mut(h * dh, dh).rows_range(qs.start, qs.len),
                );
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention(Box::new(AttnRecord {
                q,
                k,
                v,
                width,
                heads,
                q_segs: q_segs.to_vec(),
                k_segs: k_segs.to_vec(),
                probs,
            })),
        )
    }

    /// Mean label-smoothed cross-entropy of `logits` rows against `targets`.
    ///
    /// The smoothed target puts `1 - ε + ε/V` on the gold class and `ε/V`
    /// elsewhere. Returns a `1×1` node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], smoothing: T) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len());
        let vocab = T::of(lv.cols() as f64);
        let mut probs = lv.clone();
        let mut row_losses = Vec::with_capacity(targets.len());
        for (r, &t) in targets.iter().enumerate() {
            let z = lv.row(r);
            let zsum: T = z.iter().copied().sum();
            let lse = softmax_in_place(probs.row_mut(r));
            let gold = z[t as usize];
            // -Σ q_j (z_j - lse)
            let loss = lse - (T::one() - smoothing) * gold - smoothing * zsum / vocab;
            row_losses.push(loss);
        }
        let n = T::of(targets.len().max(1) as f64);
        let mean = row_losses.iter().copied().sum::<T>() / n;
        self.push(
            Mat::from_vec(1, 1, vec![mean]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                smoothing,
                probs,
                row_losses,
            },
        )
    }

    /// Per-row losses recorded by a cross-entropy node.
    pub fn row_losses(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].op {
            Op::CrossEntropy { row_losses, .. } => row_losses,
            _ => panic!("row_losses on a non cross-entropy node"),
        }
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    /// Back-propagates from a `1×1` node, returning parameter gradients.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).shape(), (1, 1), "backward from a scalar");
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::from_vec(1, 1, vec![T::one()]));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Gather { table, ids, scale } => {
                    let acc = self.grad_slot(&mut grads, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        for (a, &x) in acc.row_mut(id as usize).iter_mut().zip(g.row(r)) {
                            *a += x * *scale;
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    {
                        let dx = self.grad_slot(&mut grads, *x);
                        gemm(T::one(), g.view(), wv.view().t(), T::one(), dx.view_mut());
                    }
                    {
                        let dw = self.grad_slot(&mut grads, *w);
                        gemm(T::one(), xv.view().t(), g.view(), T::one(), dw.view_mut());
                    }
                    if let Some(b) = b {
                        let db = self.grad_slot(&mut grads, *b);
                        col_sum_into(&g, db.data_mut());
                    }
                }
                Op::MatMulT { x, w } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    {
                        let dx = self.grad_slot(&mut grads, *x);
                        gemm(T::one(), g.view(), wv.view(), T::one(), dx.view_mut());
                    }
                    let dw = self.grad_slot(&mut grads, *w);
                    gemm(T::one(), g.view().t(), xv.view(), T::one(), dw.view_mut());
                }
                Op::AddRow { x, b } => {
                    {
                        let db = self.grad_slot(&mut grads, *b);
                        col_sum_into(&g, db.data_mut());
                    }
                    self.grad_slot(&mut grads, *x).add_assign(&g);
                }
                Op::Add { a, b } => {
                    self.grad_slot(&mut grads, *a).add_assign(&g);
                    self.grad_slot(&mut grads, *b).add_assign(&g);
                }
                Op::Relu { x } => {
                    let out = self.value(Var(idx));
                    let dx = self.grad_slot(&mut grads, *x);
                    for ((d, &gg), &y) in dx.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        if y > T::zero() {
                            *d += gg;
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain).data().to_vec();
                    {
                        let dg = self.grad_slot(&mut grads, *gain);
                        for r in 0..g.rows() {
                            for ((a, &gg), &xh) in dg.data_mut().iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                                *a += gg * xh;
                            }
                        }
                    }
                    {
                        let db = self.grad_slot(&mut grads, *bias);
                        col_sum_into(&g, db.data_mut());
                    }
                    let dx = self.grad_slot(&mut grads, *x);
                    let n = T::of(g.cols() as f64);
                    let mut dxhat = vec![T::zero(); g.cols()];
                    for r in 0..g.rows() {
                        for ((d, &gg), &gain) in dxhat.iter_mut().zip(g.row(r)).zip(&gv) {
                            *d = gg * gain;
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() / n;
                        let mean_dx = dxhat.iter().zip(xhat.row(r)).map(|(&d, &xh)| d * xh).sum::<T>() / n;
                        for ((o, &d), &xh) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xhat.row(r)) {
                            *o += rstd[r] * (d - mean_d - xh * mean_dx);
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let dx = self.grad_slot(&mut grads, *x);
                    for ((d, &gg), &m) in dx.data_mut().iter_mut().zip(g.data()).zip(mask) {
                        *d += gg * m;
                    }
                }
                Op::Attention(rec) => self.attention_backward(&mut grads, rec, &g),
                Op::CrossEntropy {
                    logits,
                    targets,
                    smoothing,
                    probs,
                    ..
                } => {
                    let upstream = g.data()[0];
                    let n = T::of(targets.len().max(1) as f64);
                    let vocab = T::of(probs.cols() as f64);
                    let off = *smoothing / vocab;
                    let dl = self.grad_slot(&mut grads, *logits);
                    for (r, &t) in targets.iter().enumerate() {
                        let drow = dl.row_mut(r);
                        for (j, (d, &p)) in drow.iter_mut().zip(probs.row(r)).enumerate() {
                            let q = if j == t as usize {
                                T::one() - *smoothing + off
                            } else {
                                off
                            };
                            *d += upstream * (p - q) / n;
                        }
                    }
                }
            }
        }

        let mut out: Vec<Option<Mat<T>>> = (0..self.params.len()).map(|_| None).collect();
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                out[pid] = grads[v.0].take();
            }
        }
        Gradients { grads: out }
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Mat<T>>], v: Var) -> &'g mut Mat<T> {
        let (r, c) = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Mat::zeros(r, c))
    }

    fn attention_backward(&self, grads: &mut [Option<Mat<T>>], rec: &AttnRecord<T>, g: &Mat<T>) {
        let dh = rec.width / rec.heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let qv = self.value(rec.q.var);
        let kv = self.value(rec.k.var);
        let vv = self.value(rec.v.var);
        let mut dq = Mat::zeros(qv.rows(), rec.width);
        let mut dk = Mat::zeros(kv.rows(), rec.width);
        let mut dv = Mat::zeros(vv.rows(), rec.width);
        let mut pi = 0;
        for (qs, ks) in rec.q_segs.iter().zip(&rec.k_segs) {
            for h in 0..rec.heads {
                let p = &rec.probs[pi];
                pi += 1;
                let pm = MatRef::new(p, qs.len, ks.len);
                let go = g.col_block(h * dh, dh).rows_range(qs.start, qs.len);
                let qh = qv.col_block(rec.q.col + h * dh, dh).rows_range(qs.start, qs.len);
                let kh = kv.col_block(rec.k.col + h * dh, dh).rows_range(ks.start, ks.len);
                let vh = vv.col_block(rec.v.col + h * dh, dh).rows_range(ks.start, ks.len);
                // dV += Pᵀ·dO
                gemm(
                    T::one(),
                    pm.t(),
                    go,
                    T::one(),
                    dv.col_block_mut(h * dh, dh).rows_range(ks.start, ks.len),
                );
                // dP = dO·Vᵀ, then softmax backward in place.
                let mut ds = vec![T::zero(); qs.len * ks.len];
                gemm(T::one(), go, vh.t(), T::zero(), MatMut::new(&mut ds, qs.len, ks.len));
                for i in 0..qs.len {
                    let prow = &p[i * ks.len..(i + 1) * ks.len];
                    let drow = &mut ds[i * ks.len..(i + 1) * ks.len];
                    let inner: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                    for (d, &pp) in drow.iter_mut().zip(prow) {
                        *d = pp * (*d - inner);
                    }
                }
                let dsm = MatRef::new(&ds, qs.len, ks.len);
                gemm(
                    scale,
                    dsm,
                    kh,
                    T::one(),
                    dq.col_block_mut(h * dh, dh).rows_range(qs.start, qs.len),
                );
                gemm(
                    scale,
                    dsm.t(),
                    qh,
                    T::one(),
                    dk.col_block_mut(h * dh, dh).rows_range(ks.start, ks.len),
                );
            }
        }
        for (slot, d) in [(rec.q, dq), (rec.k, dk), (rec.v, dv)] {
            let acc = self.grad_slot(grads, slot.var);
            for r in 0..d.rows() {
                for (a, &x) in acc.row_mut(r)[slot.col..slot.col + rec.width].iter_mut().zip(d.row(r)) {
                    *a += x;
                }
            }
        }
    }
}

fn col_sum_into<T: Scalar>(g: &Mat<T>, acc: &mut [T]) {
    for r in 0..g.rows() {
        for (a, &x) in acc.iter_mut().zip(g.row(r)) {
            *a += x;
        }
    }
}
