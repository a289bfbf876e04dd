//! Reverse-mode differentiation over dense row-major f64 matrices.
//!
//! A [`Graph`] records every operation of one forward pass; [`Graph::backward`]
//! replays the tape in reverse and returns gradients for trainable
//! parameters only. Nodes that cannot reach a trainable parameter are
//! skipped during the backward sweep.

use std::collections::HashMap;
use std::rc::Rc;

use super::params::ParamStore;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape/data mismatch");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// `out += a · b` for `a: m×k`, `b: k×n`.
fn matmul_acc(a: &Mat, b: &Mat, out: &mut [f64]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` for `a: m×k`, `b: n×k`.
fn matmul_bt_acc(a: &Mat, b: &Mat, out: &mut [f64]) {
    let (m, k, n) = (a.rows, a.cols, b.rows);
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out += aᵀ · b` for `a: k×m`, `b: k×n`.
fn matmul_at_acc(a: &Mat, b: &Mat, out: &mut [f64]) {
    let (k, m, n) = (a.rows, a.cols, b.cols);
    for p in 0..k {
        let brow = &b.data[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a.data[p * m + i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

const RMS_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise softmax restricted to allowed entries; rows with nothing
/// allowed come out as zeros.
pub fn masked_softmax_rows(src: &Mat, allowed: Option<&[bool]>) -> Mat {
    let mut out = Mat::zeros(src.rows, src.cols);
    for r in 0..src.rows {
        let row = src.row(r);
        let ok = |c: usize| allowed.is_none_or(|a| a[r * src.cols + c]);
        let mut max = f64::NEG_INFINITY;
        for (c, &v) in row.iter().enumerate() {
            if ok(c) && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        let orow = &mut out.data[r * src.cols..(r + 1) * src.cols];
        for (c, &v) in row.iter().enumerate() {
            if ok(c) {
                let e = (v - max).exp();
                orow[c] = e;
                sum += e;
            }
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

enum Op {
    Leaf,
    Param(usize),
    Gather { src: NodeId, ids: Vec<usize> },
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    RmsNorm { x: NodeId, gain: NodeId, inv: Vec<f64> },
    Gelu(NodeId),
    SliceCols { src: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    Softmax { src: NodeId },
    AddBias { src: NodeId, table: NodeId, buckets: Rc<[usize]>, head: usize },
    MeanRows { src: NodeId, rows: Vec<usize> },
    Sigmoid(NodeId),
    Affine { src: NodeId, mul: f64 },
    CrossEntropy { logits: NodeId, targets: Vec<Option<usize>>, probs: Mat, count: usize },
    SquaredError { src: NodeId, target: f64 },
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'a> {
    params: &'a ParamStore,
    trainable: Option<&'a [bool]>,
    nodes: Vec<Node>,
    param_nodes: HashMap<usize, NodeId>,
}

impl<'a> Graph<'a> {
    /// A graph over `params`. With `trainable = None` nothing is
    /// differentiated (inference).
    pub fn new(params: &'a ParamStore, trainable: Option<&'a [bool]>) -> Self {
        Self {
            params,
            trainable,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Mat, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs_grad = match op {
            Op::Param(i) => self.trainable.is_some_and(|t| t[i]),
            _ => inputs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf, &[])
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        if let Some(&id) = self.param_nodes.get(&index) {
            return id;
        }
        let t = &self.params.tensors()[index];
        let value = Mat::from_vec(t.rows(), t.cols(), t.data.clone());
        let id = self.push(value, Op::Param(index), &[]);
        self.param_nodes.insert(index, id);
        id
    }

    pub fn gather(&mut self, src: NodeId, ids: Vec<usize>) -> NodeId {
        let s = &self.nodes[src].value;
        let mut out = Mat::zeros(ids.len(), s.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.data[r * s.cols..(r + 1) * s.cols].copy_from_slice(s.row(id));
        }
        self.push(out, Op::Gather { src, ids }, &[src])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(av.cols, bv.rows, "matmul shape");
        let mut out = Mat::zeros(av.rows, bv.cols);
        matmul_acc(av, bv, &mut out.data);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(av.cols, bv.cols, "matmul_bt shape");
        let mut out = Mat::zeros(av.rows, bv.rows);
        matmul_bt_acc(av, bv, &mut out.data);
        self.push(out, Op::MatMulBt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "add shape");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let out = Mat::from_vec(av.rows, av.cols, data);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((bv.rows, bv.cols), (1, av.cols), "add_row shape");
        let mut out = av.clone();
        for r in 0..out.rows {
            for (o, &v) in out.data[r * av.cols..(r + 1) * av.cols].iter_mut().zip(&bv.data) {
                *o += v;
            }
        }
        self.push(out, Op::AddRow(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let av = &self.nodes[a].value;
        let out = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|v| v * s).collect());
        self.push(out, Op::Scale(a, s), &[a])
    }

    /// Root-mean-square normalization of each row with a learned `1×n` gain.
    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId) -> NodeId {
        let (xv, gv) = (&self.nodes[x].value, &self.nodes[gain].value);
        let n = xv.cols;
        let mut out = Mat::zeros(xv.rows, n);
        let mut inv = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let ms = row.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let k = 1.0 / (ms + RMS_EPS).sqrt();
            inv.push(k);
            for c in 0..n {
                out.data[r * n + c] = row[c] * k * gv.data[c];
            }
        }
        self.push(out, Op::RmsNorm { x, gain, inv }, &[x, gain])
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a].value;
        let out = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|&v| gelu(v)).collect());
        self.push(out, Op::Gelu(a), &[a])
    }

    pub fn slice_cols(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let s = &self.nodes[src].value;
        let mut out = Mat::zeros(s.rows, len);
        for r in 0..s.rows {
            out.data[r * len..(r + 1) * len].copy_from_slice(&s.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { src, start }, &[src])
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let rows = self.nodes[parts[0]].value.rows;
        let cols: usize = parts.iter().map(|&p| self.nodes[p].value.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in &parts {
            let pv = &self.nodes[p].value;
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + pv.cols].copy_from_slice(pv.row(r));
            }
            off += pv.cols;
        }
        self.push(out, Op::ConcatCols(parts.clone()), &parts)
    }

    pub fn softmax(&mut self, src: NodeId, allowed: Option<Rc<[bool]>>) -> NodeId {
        let out = masked_softmax_rows(&self.nodes[src].value, allowed.as_deref());
        self.push(out, Op::Softmax { src }, &[src])
    }

    /// Adds `table[buckets[i], head]` to entry `i` of `src`.
    pub fn add_bias(&mut self, src: NodeId, table: NodeId, buckets: Rc<[usize]>, head: usize) -> NodeId {
        let (sv, tv) = (&self.nodes[src].value, &self.nodes[table].value);
        let mut out = sv.clone();
        for (o, &b) in out.data.iter_mut().zip(buckets.iter()) {
            *o += tv.data[b * tv.cols + head];
        }
        self.push(out, Op::AddBias { src, table, buckets, head }, &[src, table])
    }

    pub fn mean_rows(&mut self, src: NodeId, rows: Vec<usize>) -> NodeId {
        let s = &self.nodes[src].value;
        let mut out = Mat::zeros(1, s.cols);
        for &r in &rows {
            for (o, v) in out.data.iter_mut().zip(s.row(r)) {
                *o += v;
            }
        }
        let k = rows.len() as f64;
        out.data.iter_mut().for_each(|o| *o /= k);
        self.push(out, Op::MeanRows { src, rows }, &[src])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a].value;
        let out = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|&v| sigmoid(v)).collect());
        self.push(out, Op::Sigmoid(a), &[a])
    }

    /// `mul · a + add`, elementwise.
    pub fn affine(&mut self, src: NodeId, mul: f64, add: f64) -> NodeId {
        let av = &self.nodes[src].value;
        let out = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|v| mul * v + add).collect());
        self.push(out, Op::Affine { src, mul }, &[src])
    }

    /// Mean negative log-likelihood of `targets` over rows that have one.
    /// Returns `None` when no row has a target.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<Option<usize>>) -> Option<NodeId> {
        let lv = &self.nodes[logits].value;
        let count = targets.iter().flatten().count();
        if count == 0 {
            return None;
        }
        let mut probs = Mat::zeros(lv.rows, lv.cols);
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let lp = log_softmax(lv.row(r));
            loss -= lp[t];
            for (p, l) in probs.data[r * lv.cols..(r + 1) * lv.cols].iter_mut().zip(&lp) {
                *p = l.exp();
            }
        }
        let out = Mat::from_vec(1, 1, vec![loss / count as f64]);
        Some(self.push(out, Op::CrossEntropy { logits, targets, probs, count }, &[logits]))
    }

    pub fn squared_error(&mut self, src: NodeId, target: f64) -> NodeId {
        let v = self.nodes[src].value.data[0];
        let out = Mat::from_vec(1, 1, vec![(v - target).powi(2)]);
        self.push(out, Op::SquaredError { src, target }, &[src])
    }

    /// Gradients of the scalar node `out` with respect to every trainable
    /// parameter, indexed like the parameter store.
    pub fn backward(&self, out: NodeId) -> Vec<Option<Vec<f64>>> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out] = Some(Mat::from_vec(1, 1, vec![1.0]));
        let mut result: Vec<Option<Vec<f64>>> = vec![None; self.params.len()];

        for id in (0..=out).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let needs = |n: NodeId| self.nodes[n].needs_grad;
            macro_rules! acc {
                ($n:expr) => {{
                    let n = $n;
                    let v = &self.nodes[n].value;
                    grads[n].get_or_insert_with(|| Mat::zeros(v.rows, v.cols))
                }};
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(i) => result[*i] = Some(g.data),
                Op::Gather { src, ids } => {
                    let dst = acc!(*src);
                    let c = dst.cols;
                    for (r, &row) in ids.iter().enumerate() {
                        for (d, v) in dst.data[row * c..(row + 1) * c].iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if needs(*a) {
                        let bv = &self.nodes[*b].value;
                        matmul_bt_acc(&g, bv, &mut acc!(*a).data);
                    }
                    if needs(*b) {
                        let av = &self.nodes[*a].value;
                        matmul_at_acc(av, &g, &mut acc!(*b).data);
                    }
                }
                Op::MatMulBt(a, b) => {
                    if needs(*a) {
                        let bv = &self.nodes[*b].value;
                        matmul_acc(&g, bv, &mut acc!(*a).data);
                    }
                    if needs(*b) {
                        let av = &self.nodes[*a].value;
                        matmul_at_acc(&g, av, &mut acc!(*b).data);
                    }
                }
                Op::Add(a, b) => {
                    for n in [*a, *b] {
                        if needs(n) {
                            acc!(n).data.iter_mut().zip(&g.data).for_each(|(d, v)| *d += v);
                        }
                    }
                }
                Op::AddRow(a, b) => {
                    if needs(*a) {
                        acc!(*a).data.iter_mut().zip(&g.data).for_each(|(d, v)| *d += v);
                    }
                    if needs(*b) {
                        let dst = acc!(*b);
                        for r in 0..g.rows {
                            dst.data.iter_mut().zip(g.row(r)).for_each(|(d, v)| *d += v);
                        }
                    }
                }
                Op::Scale(a, s) => {
                    acc!(*a).data.iter_mut().zip(&g.data).for_each(|(d, v)| *d += s * v);
                }
                Op::RmsNorm { x, gain, inv } => {
                    let xv = &self.nodes[*x].value;
                    let gv = &self.nodes[*gain].value;
                    let n = xv.cols;
                    if needs(*gain) {
                        let dst = acc!(*gain);
                        for r in 0..xv.rows {
                            for c in 0..n {
                                dst.data[c] += g.at(r, c) * xv.at(r, c) * inv[r];
                            }
                        }
                    }
                    if needs(*x) {
                        let dst = acc!(*x);
                        for r in 0..xv.rows {
                            let k = inv[r];
                            let dot: f64 = (0..n).map(|c| gv.data[c] * g.at(r, c) * xv.at(r, c)).sum();
                            for c in 0..n {
                                dst.data[r * n + c] +=
                                    k * gv.data[c] * g.at(r, c) - k * k * k * xv.at(r, c) * dot / n as f64;
                            }
                        }
                    }
                }
                Op::Gelu(a) => {
                    let av = &self.nodes[*a].value;
                    let dst = acc!(*a);
                    for ((d, &x), &v) in dst.data.iter_mut().zip(&av.data).zip(&g.data) {
                        *d += v * gelu_grad(x);
                    }
                }
                Op::SliceCols { src, start } => {
                    let dst = acc!(*src);
                    let c = dst.cols;
                    for r in 0..g.rows {
                        for (d, v) in dst.data[r * c + start..r * c + start + g.cols].iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.cols;
                        if needs(p) {
                            let dst = acc!(p);
                            for r in 0..g.rows {
                                for (d, v) in dst.data[r * w..(r + 1) * w].iter_mut().zip(&g.row(r)[off..off + w]) {
                                    *d += v;
                                }
                            }
                        }
                        off += w;
                    }
                }
                Op::Softmax { src, .. } => {
                    let p = &node.value;
                    let dst = acc!(*src);
                    for r in 0..p.rows {
                        let prow = p.row(r);
                        let grow = g.row(r);
                        let dot: f64 = prow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for c in 0..p.cols {
                            dst.data[r * p.cols + c] += prow[c] * (grow[c] - dot);
                        }
                    }
                }
                Op::AddBias { src, table, buckets, head } => {
                    if needs(*src) {
                        acc!(*src).data.iter_mut().zip(&g.data).for_each(|(d, v)| *d += v);
                    }
                    if needs(*table) {
                        let dst = acc!(*table);
                        let h = dst.cols;
                        for (&b, v) in buckets.iter().zip(&g.data) {
                            dst.data[b * h + head] += v;
                        }
                    }
                }
                Op::MeanRows { src, rows } => {
                    let dst = acc!(*src);
                    let c = dst.cols;
                    let k = rows.len() as f64;
                    for &r in rows {
                        for (d, v) in dst.data[r * c..(r + 1) * c].iter_mut().zip(&g.data) {
                            *d += v / k;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let dst = acc!(*a);
                    for ((d, &yv), &v) in dst.data.iter_mut().zip(&y.data).zip(&g.data) {
                        *d += v * yv * (1.0 - yv);
                    }
                }
                Op::Affine { src, mul } => {
                    acc!(*src).data.iter_mut().zip(&g.data).for_each(|(d, v)| *d += mul * v);
                }
                Op::CrossEntropy { logits, targets, probs, count } => {
                    let scale = g.data[0] / *count as f64;
                    let dst = acc!(*logits);
                    let c = dst.cols;
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for (d, p) in dst.data[r * c..(r + 1) * c].iter_mut().zip(probs.row(r)) {
                            *d += scale * p;
                        }
                        dst.data[r * c + t] -= scale;
                    }
                }
                Op::SquaredError { src, target } => {
                    let v = self.nodes[*src].value.data[0];
                    acc!(*src).data[0] += 2.0 * (v - target) * g.data[0];
                }
            }
        }
        result
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_softmax_skips_disallowed() {
        let m = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        let allowed = [true, true, false, false, false, false];
        let p = masked_softmax_rows(&m, Some(&allowed));
        assert_eq!(p.at(0, 2), 0.0);
        assert!((p.at(0, 0) + p.at(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(p.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
