//! Reverse-mode tape.
//!
//! Operations append nodes in evaluation order, so the node vector is already
//! topologically sorted and `backward` is a single reverse sweep.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{matmul_into, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const NO_ARGMAX: usize = usize::MAX;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Concat(Var, Var),
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    ScaleRows(Var, Var),
    SelectCol(Var, usize),
    Interpolate {
        x: Var,
        idx: Vec<usize>,
        weights: Vec<f64>,
        k: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph with gradient slots for its leaves.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: BTreeMap<usize, Tensor>,
    params: BTreeMap<String, Var>,
    kinks: u64,
}

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0000_0100_0000_01b3)
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            kinks: 0xcbf2_9ce4_8422_2325,
            ..Tape::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Registers (once per tape) the named parameter from `store`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .value(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?
            .clone();
        let v = self.leaf(t);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameters registered on this tape, by name.
    pub fn params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Hash of every ReLU mask and max-pool argmax recorded so far. Two forward
    /// passes with equal signatures took the same piecewise-linear branch.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    /// Accumulated gradient of a differentiable leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v.0)
    }

    pub fn zero_grads(&mut self) {
        self.grads.clear();
    }

    fn check_rank2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.check_rank2("matmul", a)?;
        let (k2, c) = self.check_rank2("matmul", b)?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; r * c];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, k, c);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`C` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.numel() != xv.cols() || bv.rank() > 1 {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let b = bv.data();
        let mut out = xv.data().to_vec();
        for row in out.chunks_exact_mut(b.len()) {
            for (o, bb) in row.iter_mut().zip(b) {
                *o += bb;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * c).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut h = self.kinks;
        let data: Vec<f64> = xv
            .data()
            .iter()
            .map(|&v| {
                let on = v > 0.0;
                h = mix(h, on as u64);
                if on {
                    v
                } else {
                    0.0
                }
            })
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.kinks = h;
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    /// Concatenation along the last axis; all leading axes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.is_empty() || sb.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::Shape {
                op: "concat_last",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (ca, cb) = (av.cols(), bv.cols());
        let mut out = Vec::with_capacity(av.numel() + bv.numel());
        for (ra, rb) in av.data().chunks_exact(ca).zip(bv.data().chunks_exact(cb)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(a, b), rg))
    }

    /// Rows of `x` (a matrix) at `idx`, in order; repeats are allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, _) = self.check_rank2("gather_rows", x)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::InvalidArgument(format!(
                "gather index {bad} out of range for {r} rows"
            )));
        }
        let t = self.value(x).select_rows(idx)?;
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Column-wise max over consecutive row segments `offsets[s]..offsets[s+1]`.
    ///
    /// An empty segment yields a zero row and passes no gradient. Ties go to
    /// the lowest row.
    pub fn segment_max(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let (r, c) = self.check_rank2("segment_max", x)?;
        if offsets.len() < 2
            || offsets[0] != 0
            || *offsets.last().unwrap() != r
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::InvalidArgument(format!(
                "bad segment offsets for {r} rows"
            )));
        }
        let segs = offsets.len() - 1;
        let xv = self.value(x).data();
        let mut out = vec![0.0; segs * c];
        let mut argmax = vec![NO_ARGMAX; segs * c];
        let mut h = self.kinks;
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo == hi {
                h = mix(h, NO_ARGMAX as u64);
                continue;
            }
            let o = &mut out[s * c..(s + 1) * c];
            let am = &mut argmax[s * c..(s + 1) * c];
            o.copy_from_slice(&xv[lo * c..(lo + 1) * c]);
            am.fill(lo);
            for row in lo + 1..hi {
                let xr = &xv[row * c..(row + 1) * c];
                for j in 0..c {
                    if xr[j] > o[j] {
                        o[j] = xr[j];
                        am[j] = row;
                    }
                }
            }
            for &a in am.iter() {
                h = mix(h, (a - lo) as u64);
            }
        }
        self.kinks = h;
        let t = Tensor::new(vec![segs, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::SegmentMax { x, argmax }, rg))
    }

    /// Per-column maximum of a `K x C` matrix, returned as a length-`C` vector.
    pub fn max_reduce_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.check_rank2("max_reduce_rows", x)?;
        if r == 0 {
            return Err(Error::EmptyReduction("max_reduce_rows"));
        }
        let m = self.segment_max(x, &[0, r])?;
        let node = &mut self.nodes[m.0];
        node.value = node.value.clone().reshape(vec![c])?;
        Ok(m)
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("softmax_last"));
        }
        let c = xv.cols();
        let mut out = xv.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax(x), rg))
    }

    /// `out[r, :] = w[r] * x[r, :]` where `w` holds one value per row.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (r, c) = self.check_rank2("scale_rows", x)?;
        if self.value(w).numel() != r {
            return Err(Error::Shape {
                op: "scale_rows",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(w).to_vec(),
            });
        }
        let wv = self.value(w).data();
        let mut out = self.value(x).data().to_vec();
        for (row, &s) in out.chunks_exact_mut(c).zip(wv) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        let t = Tensor::new(vec![r, c], out)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(t, Op::ScaleRows(x, w), rg))
    }

    /// Column `col` of a matrix as an `R x 1` matrix.
    pub fn select_col(&mut self, x: Var, col: usize) -> Result<Var> {
        let (r, c) = self.check_rank2("select_col", x)?;
        if col >= c {
            return Err(Error::InvalidArgument(format!(
                "column {col} out of range for width {c}"
            )));
        }
        let xv = self.value(x);
        let data = (0..r).map(|i| xv.at(i, col)).collect();
        let t = Tensor::new(vec![r, 1], data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::SelectCol(x, col), rg))
    }

    /// `out[i, :] = sum_j weights[i*k + j] * x[idx[i*k + j], :]` with constant
    /// indices and weights.
    pub fn interpolate(&mut self, x: Var, idx: &[usize], weights: &[f64], k: usize) -> Result<Var> {
        let (r, c) = self.check_rank2("interpolate", x)?;
        if k == 0 || idx.len() != weights.len() || idx.len() % k != 0 || idx.is_empty() {
            return Err(Error::InvalidArgument(
                "interpolate needs k >= 1 and matching index/weight lists".into(),
            ));
        }
        if idx.iter().any(|&i| i >= r) {
            return Err(Error::InvalidArgument("interpolate index out of range".into()));
        }
        let n = idx.len() / k;
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c];
        for (i, o) in out.chunks_exact_mut(c).enumerate() {
            for j in i * k..(i + 1) * k {
                let w = weights[j];
                let src = &xv[idx[j] * c..(idx[j] + 1) * c];
                for (ov, sv) in o.iter_mut().zip(src) {
                    *ov += w * sv;
                }
            }
        }
        let t = Tensor::new(vec![n, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::Interpolate {
                x,
                idx: idx.to_vec(),
                weights: weights.to_vec(),
                k,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)` over
    /// rows whose label is not `ignore`. No counted rows gives zero loss.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        ignore: Option<usize>,
    ) -> Result<Var> {
        let (n, k) = self.check_rank2("cross_entropy", logits)?;
        if labels.len() != n {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let lv = self.value(logits);
        if lv.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cross_entropy"));
        }
        let mut targets = Vec::with_capacity(n);
        for &l in labels {
            if Some(l) == ignore {
                targets.push(None);
            } else if l >= k {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: k,
                });
            } else {
                targets.push(Some(l));
            }
        }
        let mut probs = lv.data().to_vec();
        let mut total = 0.0;
        let mut count = 0;
        for (row, (t, logit_row)) in probs
            .chunks_exact_mut(k)
            .zip(targets.iter().zip(lv.data().chunks_exact(k)))
        {
            softmax_in_place(row);
            if let Some(t) = *t {
                let m = logit_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + logit_row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                total += lse - logit_row[t];
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Accumulates `d loss / d leaf` into every differentiable leaf's slot.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let nodes = &self.nodes;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        fn slot<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut [f64] {
            adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    adj[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (k, c) = (av.cols(), bv.cols());
                    if nodes[a.0].requires_grad {
                        matmul_nt_acc(&g, bv.data(), slot(&mut adj, nodes, *a), k, c);
                    }
                    if nodes[b.0].requires_grad {
                        matmul_tn_acc(av.data(), &g, slot(&mut adj, nodes, *b), k, c);
                    }
                }
                Op::AddBias(x, b) => {
                    if nodes[x.0].requires_grad {
                        add_assign(slot(&mut adj, nodes, *x), &g);
                    }
                    if nodes[b.0].requires_grad {
                        let db = slot(&mut adj, nodes, *b);
                        let c = db.len();
                        for row in g.chunks_exact(c) {
                            add_assign(db, row);
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if nodes[v.0].requires_grad {
                            add_assign(slot(&mut adj, nodes, *v), &g);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if nodes[a.0].requires_grad {
                        let da = slot(&mut adj, nodes, *a);
                        for ((d, gg), y) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gg * y;
                        }
                    }
                    if nodes[b.0].requires_grad {
                        let db = slot(&mut adj, nodes, *b);
                        for ((d, gg), x) in db.iter_mut().zip(&g).zip(av) {
                            *d += gg * x;
                        }
                    }
                }
                Op::Scale(x, c) => {
                    let dx = slot(&mut adj, nodes, *x);
                    for (d, gg) in dx.iter_mut().zip(&g) {
                        *d += gg * c;
                    }
                }
                Op::Relu(x) => {
                    let xv = nodes[x.0].value.data();
                    let dx = slot(&mut adj, nodes, *x);
                    for ((d, gg), v) in dx.iter_mut().zip(&g).zip(xv) {
                        if *v > 0.0 {
                            *d += gg;
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let ca = nodes[a.0].value.cols();
                    let cb = nodes[b.0].value.cols();
                    if nodes[a.0].requires_grad {
                        let da = slot(&mut adj, nodes, *a);
                        for (d, gr) in da.chunks_exact_mut(ca).zip(g.chunks_exact(ca + cb)) {
                            add_assign(d, &gr[..ca]);
                        }
                    }
                    if nodes[b.0].requires_grad {
                        let db = slot(&mut adj, nodes, *b);
                        for (d, gr) in db.chunks_exact_mut(cb).zip(g.chunks_exact(ca + cb)) {
                            add_assign(d, &gr[ca..]);
                        }
                    }
                }
                Op::Gather { x, idx } => {
                    let c = nodes[x.0].value.cols();
                    let dx = slot(&mut adj, nodes, *x);
                    for (&src, gr) in idx.iter().zip(g.chunks_exact(c)) {
                        add_assign(&mut dx[src * c..(src + 1) * c], gr);
                    }
                }
                Op::SegmentMax { x, argmax } => {
                    let c = nodes[x.0].value.cols();
                    let dx = slot(&mut adj, nodes, *x);
                    for (pos, (&row, gg)) in argmax.iter().zip(&g).enumerate() {
                        if row != NO_ARGMAX {
                            dx[row * c + pos % c] += gg;
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let c = node.value.cols();
                    let dx = slot(&mut adj, nodes, *x);
                    for ((d, yr), gr) in dx
                        .chunks_exact_mut(c)
                        .zip(y.chunks_exact(c))
                        .zip(g.chunks_exact(c))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((dd, yy), gg) in d.iter_mut().zip(yr).zip(gr) {
                            *dd += yy * (gg - dot);
                        }
                    }
                }
                Op::ScaleRows(x, w) => {
                    let xv = &nodes[x.0].value;
                    let c = xv.cols();
                    let wv = nodes[w.0].value.data();
                    if nodes[x.0].requires_grad {
                        let dx = slot(&mut adj, nodes, *x);
                        for ((d, gr), s) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(wv)
                        {
                            for (dd, gg) in d.iter_mut().zip(gr) {
                                *dd += gg * s;
                            }
                        }
                    }
                    if nodes[w.0].requires_grad {
                        let dw = slot(&mut adj, nodes, *w);
                        for ((d, gr), xr) in dw
                            .iter_mut()
                            .zip(g.chunks_exact(c))
                            .zip(xv.data().chunks_exact(c))
                        {
                            *d += gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                Op::SelectCol(x, col) => {
                    let c = nodes[x.0].value.cols();
                    let dx = slot(&mut adj, nodes, *x);
                    for (r, gg) in g.iter().enumerate() {
                        dx[r * c + col] += gg;
                    }
                }
                Op::Interpolate {
                    x,
                    idx,
                    weights,
                    k,
                } => {
                    let c = nodes[x.0].value.cols();
                    let dx = slot(&mut adj, nodes, *x);
                    for (i, gr) in g.chunks_exact(c).enumerate() {
                        for j in i * k..(i + 1) * k {
                            let w = weights[j];
                            let d = &mut dx[idx[j] * c..(idx[j] + 1) * c];
                            for (dd, gg) in d.iter_mut().zip(gr) {
                                *dd += w * gg;
                            }
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    if *count == 0 {
                        continue;
                    }
                    let k = nodes[logits.0].value.cols();
                    let scale = g[0] / *count as f64;
                    let dl = slot(&mut adj, nodes, *logits);
                    for ((d, p), t) in dl.chunks_exact_mut(k).zip(probs.chunks_exact(k)).zip(targets)
                    {
                        if let Some(t) = *t {
                            for (j, (dd, pp)) in d.iter_mut().zip(p).enumerate() {
                                let y = if j == t { 1.0 } else { 0.0 };
                                *dd += scale * (pp - y);
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    let dx = slot(&mut adj, nodes, *x);
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
        }

        for (i, a) in adj.into_iter().enumerate() {
            let Some(a) = a else { continue };
            let node = &self.nodes[i];
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let shape = node.value.shape().to_vec();
            match self.grads.get_mut(&i) {
                Some(acc) => add_assign(acc.data_mut(), &a),
                None => {
                    self.grads.insert(i, Tensor::new(shape, a)?);
                }
            }
        }
        Ok(())
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked")
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}
