//! A small reverse-mode differentiation tape over dense vectors.
//!
//! Nodes hold flat value buffers; parameters live outside the tape in a
//! [`ParamSet`] and receive their gradients in a matching buffer set. The
//! op set is exactly what the encoder-decoder needs, with the recurrent
//! cell and attention scoring fused into single nodes.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

pub trait Scalar: Float + FromPrimitive + Sum + Default + Debug + Send + Sync + 'static {}

impl<T: Float + FromPrimitive + Sum + Default + Debug + Send + Sync + 'static> Scalar for T {}

pub(crate) fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

/// Index of a tensor in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// A named, row-major 2-D tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Ordered collection of tensors; also used for gradient and optimizer
/// moment buffers with identical layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, tensor: Tensor<T>) -> ParamId {
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.rows, t.cols))
                .collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x = *x * k;
            }
        }
    }

    pub fn sq_norm(&self) -> T {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|&x| x * x)
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    rows: t.rows,
                    cols: t.cols,
                    data: t
                        .data
                        .iter()
                        .map(|x| U::from_f64(x.to_f64().unwrap()).unwrap())
                        .collect(),
                })
                .collect(),
        }
    }
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    /// One row of an embedding table.
    Embed {
        table: ParamId,
        row: usize,
    },
    /// `W x + b` for a vector `x`.
    Linear {
        w: ParamId,
        b: Option<ParamId>,
        x: NodeId,
    },
    /// `W x_r` for every row `x_r` of a row-major matrix node.
    LinearRows {
        w: ParamId,
        x: NodeId,
        rows: usize,
    },
    Concat(Vec<NodeId>),
    Tanh(NodeId),
    MeanRows {
        x: NodeId,
        rows: usize,
    },
    /// Gated recurrent update from precomputed input and hidden projections
    /// (`[r z n]` blocks). Caches `r`, `z`, `n` and the hidden projection of
    /// the candidate.
    Gru {
        gx: NodeId,
        gh: NodeId,
        h: NodeId,
        r: Vec<T>,
        z: Vec<T>,
        n: Vec<T>,
    },
    /// `score_i = v . tanh(key_i + q)`; caches the tanh activations.
    AttnScores {
        keys: NodeId,
        q: NodeId,
        v: ParamId,
        act: Vec<T>,
    },
    Softmax(NodeId),
    /// `sum_i w_i x_i` over the rows of a matrix node.
    WeightedRows {
        w: NodeId,
        x: NodeId,
    },
    /// `-log softmax(logits)[target]`; caches the softmax.
    CrossEntropy {
        logits: NodeId,
        target: usize,
        probs: Vec<T>,
    },
    Sum(Vec<NodeId>),
}

struct Node<T> {
    value: Vec<T>,
    op: Op<T>,
}

/// Records a forward computation against a borrowed parameter set.
pub struct Tape<'p, T> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Eight independent accumulators let the loop vectorize.
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for k in chunks * 8..a.len() {
        s = s + a[k] * b[k];
    }
    s
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn matvec<T: Scalar>(w: &Tensor<T>, x: &[T], out: &mut [T]) {
    debug_assert_eq!(w.cols, x.len());
    for (o, y) in out.iter_mut().enumerate() {
        *y = *y + dot(w.row(o), x);
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    fn push(&mut self, value: Vec<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value[0]
    }

    pub fn input(&mut self, value: Vec<T>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn embed(&mut self, table: ParamId, row: usize) -> NodeId {
        let value = self.params.get(table).row(row).to_vec();
        self.push(value, Op::Embed { table, row })
    }

    pub fn linear(&mut self, w: ParamId, b: Option<ParamId>, x: NodeId) -> NodeId {
        let wt = self.params.get(w);
        let mut out = match b {
            Some(b) => self.params.get(b).data.clone(),
            None => vec![T::zero(); wt.rows],
        };
        matvec(wt, &self.nodes[x.0].value, &mut out);
        self.push(out, Op::Linear { w, b, x })
    }

    pub fn linear_rows(&mut self, w: ParamId, x: NodeId, rows: usize) -> NodeId {
        let wt = self.params.get(w);
        let xv = &self.nodes[x.0].value;
        let cols = xv.len() / rows;
        let mut out = vec![T::zero(); rows * wt.rows];
        for r in 0..rows {
            matvec(
                wt,
                &xv[r * cols..(r + 1) * cols],
                &mut out[r * wt.rows..(r + 1) * wt.rows],
            );
        }
        self.push(out, Op::LinearRows { w, x, rows })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut out = Vec::with_capacity(parts.iter().map(|p| self.nodes[p.0].value.len()).sum());
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(out, Op::Tanh(x))
    }

    pub fn mean_rows(&mut self, x: NodeId, rows: usize) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let cols = xv.len() / rows;
        let k = T::one() / cast(rows as f64);
        let mut out = vec![T::zero(); cols];
        for r in 0..rows {
            axpy(k, &xv[r * cols..(r + 1) * cols], &mut out);
        }
        self.push(out, Op::MeanRows { x, rows })
    }

    /// `h' = (1 - z) n + z h` with `r = s(gx_r + gh_r)`, `z = s(gx_z + gh_z)`,
    /// `n = tanh(gx_n + r gh_n)`.
    pub fn gru(&mut self, gx: NodeId, gh: NodeId, h: NodeId) -> NodeId {
        let (gxv, ghv, hv) = (
            &self.nodes[gx.0].value,
            &self.nodes[gh.0].value,
            &self.nodes[h.0].value,
        );
        let hs = hv.len();
        let mut out = Vec::with_capacity(hs);
        let (mut r, mut z, mut n) = (
            Vec::with_capacity(hs),
            Vec::with_capacity(hs),
            Vec::with_capacity(hs),
        );
        for k in 0..hs {
            let rk = sigmoid(gxv[k] + ghv[k]);
            let zk = sigmoid(gxv[hs + k] + ghv[hs + k]);
            let nk = (gxv[2 * hs + k] + rk * ghv[2 * hs + k]).tanh();
            out.push((T::one() - zk) * nk + zk * hv[k]);
            r.push(rk);
            z.push(zk);
            n.push(nk);
        }
        self.push(out, Op::Gru { gx, gh, h, r, z, n })
    }

    pub fn attn_scores(&mut self, keys: NodeId, q: NodeId, v: ParamId) -> NodeId {
        let kv = &self.nodes[keys.0].value;
        let qv = &self.nodes[q.0].value;
        let vv = &self.params.get(v).data;
        let d = qv.len();
        let rows = kv.len() / d;
        let mut act = Vec::with_capacity(kv.len());
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let mut s = T::zero();
            for k in 0..d {
                let a = (kv[i * d + k] + qv[k]).tanh();
                s = s + vv[k] * a;
                act.push(a);
            }
            out.push(s);
        }
        self.push(out, Op::AttnScores { keys, q, v, act })
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let out = softmax(&self.nodes[x.0].value);
        self.push(out, Op::Softmax(x))
    }

    pub fn weighted_rows(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let cols = xv.len() / wv.len();
        let mut out = vec![T::zero(); cols];
        for (i, &wi) in wv.iter().enumerate() {
            axpy(wi, &xv[i * cols..(i + 1) * cols], &mut out);
        }
        self.push(out, Op::WeightedRows { w, x })
    }

    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        let probs = softmax(lv);
        let m = lv.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + lv.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
        let loss = lse - lv[target];
        self.push(
            vec![loss],
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        )
    }

    pub fn sum(&mut self, parts: &[NodeId]) -> NodeId {
        let s = parts.iter().map(|p| self.nodes[p.0].value[0]).sum();
        self.push(vec![s], Op::Sum(parts.to_vec()))
    }

    /// Accumulates `d root / d param` into `grads` (same layout as the
    /// tape's parameters), seeding the root with `seed`.
    pub fn backward(&self, root: NodeId, seed: T, grads: &mut ParamSet<T>) {
        let mut g: Vec<Vec<T>> = Vec::with_capacity(root.0 + 1);
        for n in &self.nodes[..=root.0] {
            g.push(vec![T::zero(); n.value.len()]);
        }
        g[root.0][0] = seed;
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if g[idx].iter().all(|x| x.is_zero()) {
                continue;
            }
            let dy = std::mem::take(&mut g[idx]);
            match &node.op {
                Op::Input => {}
                Op::Embed { table, row } => {
                    let t = grads.get_mut(*table);
                    let cols = t.cols;
                    axpy(T::one(), &dy, &mut t.data[row * cols..(row + 1) * cols]);
                }
                Op::Linear { w, b, x } => {
                    let wt = self.params.get(*w);
                    let xv = &self.nodes[x.0].value;
                    {
                        let gw = grads.get_mut(*w);
                        for (o, &d) in dy.iter().enumerate() {
                            if !d.is_zero() {
                                axpy(d, xv, &mut gw.data[o * wt.cols..(o + 1) * wt.cols]);
                            }
                        }
                    }
                    if let Some(b) = b {
                        axpy(T::one(), &dy, &mut grads.get_mut(*b).data);
                    }
                    let gx = &mut g[x.0];
                    for (o, &d) in dy.iter().enumerate() {
                        if !d.is_zero() {
                            axpy(d, wt.row(o), gx);
                        }
                    }
                }
                Op::LinearRows { w, x, rows } => {
                    let wt = self.params.get(*w);
                    let xv = &self.nodes[x.0].value;
                    let cols = xv.len() / rows;
                    let out_dim = wt.rows;
                    for r in 0..*rows {
                        let dyr = &dy[r * out_dim..(r + 1) * out_dim];
                        let xr = &xv[r * cols..(r + 1) * cols];
                        let gw = grads.get_mut(*w);
                        for (o, &d) in dyr.iter().enumerate() {
                            axpy(d, xr, &mut gw.data[o * cols..(o + 1) * cols]);
                        }
                        let gx = &mut g[x.0][r * cols..(r + 1) * cols];
                        for (o, &d) in dyr.iter().enumerate() {
                            axpy(d, wt.row(o), gx);
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        axpy(T::one(), &dy[off..off + len], &mut g[p.0]);
                        off += len;
                    }
                }
                Op::Tanh(x) => {
                    let gx = &mut g[x.0];
                    for ((gi, &d), &y) in gx.iter_mut().zip(&dy).zip(&node.value) {
                        *gi = *gi + d * (T::one() - y * y);
                    }
                }
                Op::MeanRows { x, rows } => {
                    let cols = dy.len();
                    let k = T::one() / cast(*rows as f64);
                    for r in 0..*rows {
                        axpy(k, &dy, &mut g[x.0][r * cols..(r + 1) * cols]);
                    }
                }
                Op::Gru { gx, gh, h, r, z, n } => {
                    let hs = dy.len();
                    let ghv = &self.nodes[gh.0].value;
                    let hv = &self.nodes[h.0].value;
                    let mut d_gx = vec![T::zero(); 3 * hs];
                    let mut d_gh = vec![T::zero(); 3 * hs];
                    let mut d_h = vec![T::zero(); hs];
                    for k in 0..hs {
                        let (rk, zk, nk) = (r[k], z[k], n[k]);
                        let d = dy[k];
                        let dn = d * (T::one() - zk);
                        let dz = d * (hv[k] - nk);
                        d_h[k] = d * zk;
                        let dn_pre = dn * (T::one() - nk * nk);
                        let dr = dn_pre * ghv[2 * hs + k];
                        let dr_pre = dr * rk * (T::one() - rk);
                        let dz_pre = dz * zk * (T::one() - zk);
                        d_gx[k] = dr_pre;
                        d_gh[k] = dr_pre;
                        d_gx[hs + k] = dz_pre;
                        d_gh[hs + k] = dz_pre;
                        d_gx[2 * hs + k] = dn_pre;
                        d_gh[2 * hs + k] = dn_pre * rk;
                    }
                    axpy(T::one(), &d_gx, &mut g[gx.0]);
                    axpy(T::one(), &d_gh, &mut g[gh.0]);
                    axpy(T::one(), &d_h, &mut g[h.0]);
                }
                Op::AttnScores { keys, q, v, act } => {
                    let vv = &self.params.get(*v).data;
                    let d = vv.len();
                    let mut dq = vec![T::zero(); d];
                    let mut dkeys = vec![T::zero(); act.len()];
                    let mut dv = vec![T::zero(); d];
                    for (i, &ds) in dy.iter().enumerate() {
                        for k in 0..d {
                            let a = act[i * d + k];
                            dv[k] = dv[k] + ds * a;
                            let dpre = ds * vv[k] * (T::one() - a * a);
                            dkeys[i * d + k] = dpre;
                            dq[k] = dq[k] + dpre;
                        }
                    }
                    axpy(T::one(), &dv, &mut grads.get_mut(*v).data);
                    axpy(T::one(), &dkeys, &mut g[keys.0]);
                    axpy(T::one(), &dq, &mut g[q.0]);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let inner: T = dy.iter().zip(y).map(|(&d, &p)| d * p).sum();
                    let gx = &mut g[x.0];
                    for ((gi, &d), &p) in gx.iter_mut().zip(&dy).zip(y) {
                        *gi = *gi + p * (d - inner);
                    }
                }
                Op::WeightedRows { w, x } => {
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    let cols = dy.len();
                    for i in 0..wv.len() {
                        let xr = &xv[i * cols..(i + 1) * cols];
                        let dw = dot(&dy, xr);
                        g[w.0][i] = g[w.0][i] + dw;
                        axpy(wv[i], &dy, &mut g[x.0][i * cols..(i + 1) * cols]);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let d = dy[0];
                    let gl = &mut g[logits.0];
                    for (k, (gi, &p)) in gl.iter_mut().zip(probs).enumerate() {
                        let ind = if k == *target { T::one() } else { T::zero() };
                        *gi = *gi + d * (p - ind);
                    }
                }
                Op::Sum(parts) => {
                    for p in parts {
                        g[p.0][0] = g[p.0][0] + dy[0];
                    }
                }
            }
        }
    }
}

pub fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = x.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric<F: Fn(&ParamSet<f64>) -> f64>(params: &ParamSet<f64>, f: F) -> ParamSet<f64> {
        let eps = 1e-6;
        let mut out = params.zeros_like();
        let mut p = params.clone();
        for t in 0..p.tensors.len() {
            for k in 0..p.tensors[t].data.len() {
                let orig = p.tensors[t].data[k];
                p.tensors[t].data[k] = orig + eps;
                let up = f(&p);
                p.tensors[t].data[k] = orig - eps;
                let down = f(&p);
                p.tensors[t].data[k] = orig;
                out.tensors[t].data[k] = (up - down) / (2.0 * eps);
            }
        }
        out
    }

    fn filled(name: &str, rows: usize, cols: usize, seed: f64) -> Tensor<f64> {
        let mut t = Tensor::zeros(name, rows, cols);
        for (i, x) in t.data.iter_mut().enumerate() {
            *x = ((i as f64 + 1.0) * seed).sin() * 0.7;
        }
        t
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut ps = ParamSet::new();
        let emb = ps.add(filled("emb", 3, 4, 0.3));
        let w = ps.add(filled("w", 6, 4, 0.7));
        let uh = ps.add(filled("u", 6, 2, 1.1));
        let b = ps.add(filled("b", 6, 1, 1.7));
        let wk = ps.add(filled("wk", 3, 2, 2.3));
        let wq = ps.add(filled("wq", 3, 2, 0.9));
        let v = ps.add(filled("v", 1, 3, 1.3));
        let wo = ps.add(filled("wo", 5, 4, 0.5));

        let forward = |params: &ParamSet<f64>| -> (f64, ParamSet<f64>) {
            let mut tape = Tape::new(params);
            let h0 = tape.input(vec![0.1, -0.2]);
            let mut hs = Vec::new();
            let mut h = h0;
            for row in [0, 2, 1] {
                let x = tape.embed(emb, row);
                let gx = tape.linear(w, Some(b), x);
                let gh = tape.linear(uh, None, h);
                h = tape.gru(gx, gh, h);
                hs.push(h);
            }
            let ann = tape.concat(&hs);
            let keys = tape.linear_rows(wk, ann, 3);
            let mean = tape.mean_rows(ann, 3);
            let q = tape.linear(wq, None, mean);
            let q = tape.tanh(q);
            let scores = tape.attn_scores(keys, q, v);
            let alpha = tape.softmax(scores);
            let ctx = tape.weighted_rows(alpha, ann);
            let feat = tape.concat(&[ctx, h]);
            let logits = tape.linear(wo, None, feat);
            let l1 = tape.cross_entropy(logits, 3);
            let l2 = tape.cross_entropy(logits, 0);
            let loss = tape.sum(&[l1, l2]);
            let mut grads = params.zeros_like();
            tape.backward(loss, 1.0, &mut grads);
            (tape.scalar(loss), grads)
        };

        let (_, analytic) = forward(&ps);
        let numeric = numeric(&ps, |p| forward(p).0);
        for (a, n) in analytic.tensors.iter().zip(&numeric.tensors) {
            for (x, y) in a.data.iter().zip(&n.data) {
                assert!(
                    (x - y).abs() < 1e-7 * (1.0 + y.abs()),
                    "{}: {x} vs {y}",
                    a.name
                );
            }
        }
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0f64, 1000.0]);
        assert_eq!(p, [0.5, 0.5]);
    }
}
