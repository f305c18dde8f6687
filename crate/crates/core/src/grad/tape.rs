//! Reverse-mode differentiation over dense matrices.
//!
//! Every value on the tape is a 2-D [`Tensor`]. Operations append a node;
//! [`Tape::backward`] walks the nodes in reverse and accumulates gradients
//! into the named parameter leaves. Kinks (`relu`, `abs`, clamp edges) take
//! the zero subgradient.

use std::collections::BTreeMap;
use std::rc::Rc;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Tensor>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Row partition used by the segment operations: `segment[i]` is the group
/// of row `i`, groups are `0..count`.
#[derive(Clone, Debug)]
pub struct Segments {
    pub segment: Rc<[usize]>,
    pub count: usize,
}

enum Op {
    Const,
    Param(String),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gather(Var, Rc<[usize]>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    Abs(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    RowSum(Var),
    MulCol(Var, Var),
    SegmentSoftmax(Var, Segments),
    ScatterAdd(Var, Rc<[usize]>),
    RowNormalize(Var),
    RowDot(Var, Var),
    EdgeScores(EdgeScoresOp),
    EdgeAggregate(EdgeAggregateOp),
}

/// Per-edge attention logits `a . leaky(p[dst] + q[src] - r[rel])`.
struct EdgeScoresOp {
    p: Var,
    q: Var,
    r: Var,
    a: Var,
    index: EdgeIndex,
    slope: f64,
}

/// `out[dst] += alpha * (x[x_idx] - y[y_idx])` summed over edges.
struct EdgeAggregateOp {
    x: Var,
    y: Var,
    alpha: Var,
    x_idx: Rc<[usize]>,
    y_idx: Rc<[usize]>,
    dst: Rc<[usize]>,
}

/// Row indices of the three endpoints of every edge.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub dst: Rc<[usize]>,
    pub src: Rc<[usize]>,
    pub rel: Rc<[usize]>,
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param(_) => true,
            Op::Const => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Const, &[])
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> Var {
        self.push(value, Op::Param(name.to_string()), &[])
    }

    /// Leaf bound to the current value of a stored parameter.
    pub fn param_from(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.get(name)?.clone();
        Ok(self.param(name, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T`; weights are stored as `out x in` so `x W^T` maps rows.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(v, Op::MatMulNT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 x c` row to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        let c = v.cols();
        for row in v.data_mut().chunks_mut(c) {
            for (a, b) in row.iter_mut().zip(&b) {
                *a += b;
            }
        }
        self.push(v, Op::AddRowBias(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).map(|a| a * s);
        self.push(v, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).map(|a| a + s);
        self.push(v, Op::AddScalar(x), &[x])
    }

    pub fn gather(&mut self, x: Var, idx: Rc<[usize]>) -> Var {
        let v = self.value(x).gather_rows(&idx);
        self.push(v, Op::Gather(x, idx), &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            debug_assert_eq!(t.cols(), cols);
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let v = Tensor::new(vec![rows, cols], data).expect("consistent concat");
        self.push(v, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Tensor::zeros(&[rows, total]);
        let mut offset = 0;
        for p in parts {
            let t = self.value(*p);
            let c = t.cols();
            for i in 0..rows {
                v.row_mut(i)[offset..offset + c].copy_from_slice(t.row(i));
            }
            offset += c;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let t = self.value(x);
        let rows = t.rows();
        let mut v = Tensor::zeros(&[rows, end - start]);
        for i in 0..rows {
            v.row_mut(i).copy_from_slice(&t.row(i)[start..end]);
        }
        self.push(v, Op::SliceCols(x, start), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).map(|a| if a > 0.0 { a } else { slope * a });
        self.push(v, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::abs);
        self.push(v, Op::Abs(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::ln);
        self.push(v, Op::Log(x), &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).map(|a| a.clamp(lo, hi));
        self.push(v, Op::Clamp(x, lo, hi), &[x])
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    /// Per-row sums as an `n x 1` column.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::column((0..t.rows()).map(|i| t.row(i).iter().sum()).collect());
        self.push(v, Op::RowSum(x), &[x])
    }

    /// Scales row `i` of `x` by `col[i]`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Var {
        let c = self.value(col).data().to_vec();
        let mut v = self.value(x).clone();
        let w = v.cols();
        for (row, s) in v.data_mut().chunks_mut(w).zip(&c) {
            row.iter_mut().for_each(|a| *a *= s);
        }
        self.push(v, Op::MulCol(x, col), &[x, col])
    }

    /// Softmax of an `n x 1` column within each segment.
    pub fn segment_softmax(&mut self, x: Var, seg: Segments) -> Var {
        let v = segment_softmax(self.value(x).data(), &seg);
        self.push(Tensor::column(v), Op::SegmentSoftmax(x, seg), &[x])
    }

    /// `out[idx[i]] += x[i]` into `n_out` rows.
    pub fn scatter_add(&mut self, x: Var, idx: Rc<[usize]>, n_out: usize) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let mut v = Tensor::zeros(&[n_out, c]);
        for (i, &j) in idx.iter().enumerate() {
            for (a, b) in v.row_mut(j).iter_mut().zip(t.row(i)) {
                *a += b;
            }
        }
        self.push(v, Op::ScatterAdd(x, idx), &[x])
    }

    /// Rows scaled to unit L2 norm; zero rows stay zero.
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let c = v.cols();
        for row in v.data_mut().chunks_mut(c) {
            let n = super::tensor::norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|a| *a /= n);
            }
        }
        self.push(v, Op::RowNormalize(x), &[x])
    }

    /// Row-wise inner products as an `n x 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let v = Tensor::column(
            (0..ta.rows())
                .map(|i| super::tensor::dot(ta.row(i), tb.row(i)))
                .collect(),
        );
        self.push(v, Op::RowDot(a, b), &[a, b])
    }

    /// Attention logits of edges as an `E x 1` column:
    /// `a . leaky_relu(p[dst] + q[src] - r[rel])`, with `a` a `1 x d` row.
    /// Equivalent to gathering, adding, activating and projecting, without
    /// materializing the `E x d` intermediates.
    pub fn edge_scores(
        &mut self,
        p: Var,
        q: Var,
        r: Var,
        a: Var,
        index: EdgeIndex,
        slope: f64,
    ) -> Var {
        let (pv, qv, rv, av) = (
            self.value(p),
            self.value(q),
            self.value(r),
            self.value(a).data(),
        );
        let scores: Vec<f64> = (0..index.dst.len())
            .map(|e| {
                let (pr, qr, rr) = (
                    pv.row(index.dst[e]),
                    qv.row(index.src[e]),
                    rv.row(index.rel[e]),
                );
                (0..av.len())
                    .map(|k| {
                        let z = pr[k] + qr[k] - rr[k];
                        av[k] * if z > 0.0 { z } else { slope * z }
                    })
                    .sum()
            })
            .collect();
        let op = EdgeScoresOp {
            p,
            q,
            r,
            a,
            index,
            slope,
        };
        self.push(Tensor::column(scores), Op::EdgeScores(op), &[p, q, r, a])
    }

    /// `out[dst[e]] += alpha[e] * (x[x_idx[e]] - y[y_idx[e]])` into `n_out` rows.
    pub fn edge_aggregate(
        &mut self,
        x: Var,
        y: Var,
        alpha: Var,
        x_idx: Rc<[usize]>,
        y_idx: Rc<[usize]>,
        dst: Rc<[usize]>,
        n_out: usize,
    ) -> Var {
        let (xv, yv, al) = (self.value(x), self.value(y), self.value(alpha).data());
        let c = xv.cols();
        let mut out = Tensor::zeros(&[n_out, c]);
        for e in 0..dst.len() {
            let (xr, yr, w) = (xv.row(x_idx[e]), yv.row(y_idx[e]), al[e]);
            for ((o, a), b) in out.row_mut(dst[e]).iter_mut().zip(xr).zip(yr) {
                *o += w * (a - b);
            }
        }
        let op = EdgeAggregateOp {
            x,
            y,
            alpha,
            x_idx,
            y_idx,
            dst,
        };
        self.push(out, Op::EdgeAggregate(op), &[x, y, alpha])
    }

    /// Gradients of the scalar `out` with respect to every parameter leaf.
    pub fn backward(&self, out: Var) -> Result<Grads> {
        let out_value = self.value(out);
        if out_value.len() != 1 {
            return Err(Error::Shape {
                name: "backward output".into(),
                expected: vec![1, 1],
                actual: out_value.shape().to_vec(),
            });
        }
        out_value.ensure_finite("loss")?;

        let mut grads: Vec<Option<Tensor>> = (0..=out.0).map(|_| None).collect();
        grads[out.0] = Some(Tensor::filled(out_value.shape(), 1.0));
        let mut result = Grads::new();

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Const => {}
                Op::Param(name) => match result.get_mut(name) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        result.insert(name.clone(), g);
                    }
                },
                Op::MatMul(a, b) => {
                    if self.wants(*a) {
                        let ga = g.matmul_nt(self.value(*b));
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.wants(*b) {
                        let gb = self.value(*a).matmul_tn(&g);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.wants(*a) {
                        let ga = g.matmul(self.value(*b));
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.wants(*b) {
                        let gb = g.matmul_tn(self.value(*a));
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.wants(*b) {
                        self.acc(&mut grads, *b, g.clone());
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.wants(*b) {
                        self.acc(&mut grads, *b, g.map(|x| -x));
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.wants(*a) {
                        let ga = g.zip_map(self.value(*b), |x, y| x * y);
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.wants(*b) {
                        let gb = g.zip_map(self.value(*a), |x, y| x * y);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::AddRowBias(x, bias) => {
                    if self.wants(*bias) {
                        let c = g.cols();
                        let mut gb = Tensor::zeros(self.value(*bias).shape());
                        for row in g.data().chunks(c) {
                            for (a, b) in gb.data_mut().iter_mut().zip(row) {
                                *a += b;
                            }
                        }
                        self.acc(&mut grads, *bias, gb);
                    }
                    self.acc(&mut grads, *x, g);
                }
                Op::Scale(x, s) => self.acc(&mut grads, *x, g.map(|a| a * s)),
                Op::AddScalar(x) => self.acc(&mut grads, *x, g),
                Op::Gather(x, idx) => {
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    for (r, &j) in idx.iter().enumerate() {
                        for (a, b) in gx.row_mut(j).iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                    self.acc(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let shape = self.value(*p).shape().to_vec();
                        let n = shape[0] * c;
                        if self.wants(*p) {
                            let part = Tensor::new(shape, g.data()[offset..offset + n].to_vec())?;
                            self.acc(&mut grads, *p, part);
                        }
                        offset += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for p in parts {
                        let c = self.value(*p).cols();
                        if self.wants(*p) {
                            let mut part = Tensor::zeros(&[rows, c]);
                            for r in 0..rows {
                                part.row_mut(r)
                                    .copy_from_slice(&g.row(r)[offset..offset + c]);
                            }
                            self.acc(&mut grads, *p, part);
                        }
                        offset += c;
                    }
                }
                Op::SliceCols(x, start) => {
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    let c = g.cols();
                    for r in 0..g.rows() {
                        gx.row_mut(r)[*start..*start + c].copy_from_slice(g.row(r));
                    }
                    self.acc(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let gx = g.zip_map(&node.value, |gi, y| gi * (1.0 - y * y));
                    self.acc(&mut grads, *x, gx);
                }
                Op::LeakyRelu(x, slope) => {
                    let gx = g.zip_map(
                        self.value(*x),
                        |gi, a| if a > 0.0 { gi } else { gi * slope },
                    );
                    self.acc(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let gx = g.zip_map(self.value(*x), |gi, a| if a > 0.0 { gi } else { 0.0 });
                    self.acc(&mut grads, *x, gx);
                }
                Op::Abs(x) => {
                    let gx = g.zip_map(self.value(*x), |gi, a| {
                        if a > 0.0 {
                            gi
                        } else if a < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    });
                    self.acc(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g.zip_map(&node.value, |gi, y| gi * y * (1.0 - y));
                    self.acc(&mut grads, *x, gx);
                }
                Op::Log(x) => {
                    let gx = g.zip_map(self.value(*x), |gi, a| gi / a);
                    self.acc(&mut grads, *x, gx);
                }
                Op::Clamp(x, lo, hi) => {
                    let gx = g.zip_map(
                        self.value(*x),
                        |gi, a| {
                            if a > *lo && a < *hi {
                                gi
                            } else {
                                0.0
                            }
                        },
                    );
                    self.acc(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    let gx = Tensor::filled(self.value(*x).shape(), s);
                    self.acc(&mut grads, *x, gx);
                }
                Op::RowSum(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    let c = self.value(*x).cols();
                    let mut gx = Tensor::zeros(&shape);
                    for (row, gi) in gx.data_mut().chunks_mut(c).zip(g.data()) {
                        row.iter_mut().for_each(|a| *a = *gi);
                    }
                    self.acc(&mut grads, *x, gx);
                }
                Op::MulCol(x, col) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    if self.wants(*col) {
                        let gc: Vec<f64> = g
                            .data()
                            .chunks(c)
                            .zip(xv.data().chunks(c))
                            .map(|(gr, xr)| super::tensor::dot(gr, xr))
                            .collect();
                        self.acc(&mut grads, *col, Tensor::column(gc));
                    }
                    if self.wants(*x) {
                        let cv = self.value(*col).data();
                        let mut gx = g.clone();
                        for (row, s) in gx.data_mut().chunks_mut(c).zip(cv) {
                            row.iter_mut().for_each(|a| *a *= s);
                        }
                        self.acc(&mut grads, *x, gx);
                    }
                }
                Op::SegmentSoftmax(x, seg) => {
                    let y = node.value.data();
                    let mut inner = vec![0.0; seg.count];
                    for (i, &s) in seg.segment.iter().enumerate() {
                        inner[s] += g.data()[i] * y[i];
                    }
                    let gx: Vec<f64> = seg
                        .segment
                        .iter()
                        .enumerate()
                        .map(|(i, &s)| y[i] * (g.data()[i] - inner[s]))
                        .collect();
                    self.acc(&mut grads, *x, Tensor::column(gx));
                }
                Op::ScatterAdd(x, idx) => {
                    let gx = g.gather_rows(idx);
                    self.acc(&mut grads, *x, gx);
                }
                Op::RowNormalize(x) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut gx = Tensor::zeros(xv.shape());
                    for r in 0..xv.rows() {
                        let n = super::tensor::norm(xv.row(r));
                        if n == 0.0 {
                            continue;
                        }
                        let y = node.value.row(r);
                        let gr = g.row(r);
                        let proj = super::tensor::dot(y, gr);
                        let out = &mut gx.data_mut()[r * c..(r + 1) * c];
                        for k in 0..c {
                            out[k] = (gr[k] - y[k] * proj) / n;
                        }
                    }
                    self.acc(&mut grads, *x, gx);
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.wants(*a) {
                        let mut ga = bv.clone();
                        let c = ga.cols();
                        for (row, s) in ga.data_mut().chunks_mut(c).zip(g.data()) {
                            row.iter_mut().for_each(|v| *v *= s);
                        }
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.wants(*b) {
                        let mut gb = av.clone();
                        let c = gb.cols();
                        for (row, s) in gb.data_mut().chunks_mut(c).zip(g.data()) {
                            row.iter_mut().for_each(|v| *v *= s);
                        }
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::EdgeScores(op) => {
                    let (pv, qv, rv) = (self.value(op.p), self.value(op.q), self.value(op.r));
                    let av = self.value(op.a).data();
                    let d = av.len();
                    let mut gp = Tensor::zeros(pv.shape());
                    let mut gq = Tensor::zeros(qv.shape());
                    let mut gr = Tensor::zeros(rv.shape());
                    let mut ga = Tensor::zeros(self.value(op.a).shape());
                    let mut dz = vec![0.0; d];
                    for (e, &ge) in g.data().iter().enumerate() {
                        if ge == 0.0 {
                            continue;
                        }
                        let (i, j, l) = (op.index.dst[e], op.index.src[e], op.index.rel[e]);
                        let (pr, qr, rr) = (pv.row(i), qv.row(j), rv.row(l));
                        for k in 0..d {
                            let z = pr[k] + qr[k] - rr[k];
                            let (act, slope) = if z > 0.0 {
                                (z, 1.0)
                            } else {
                                (op.slope * z, op.slope)
                            };
                            ga.data_mut()[k] += ge * act;
                            dz[k] = ge * av[k] * slope;
                        }
                        gp.row_mut(i).iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
                        gq.row_mut(j).iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
                        gr.row_mut(l).iter_mut().zip(&dz).for_each(|(a, b)| *a -= b);
                    }
                    self.acc(&mut grads, op.p, gp);
                    self.acc(&mut grads, op.q, gq);
                    self.acc(&mut grads, op.r, gr);
                    self.acc(&mut grads, op.a, ga);
                }
                Op::EdgeAggregate(op) => {
                    let (xv, yv) = (self.value(op.x), self.value(op.y));
                    let al = self.value(op.alpha).data();
                    let (wx, wy, wa) = (self.wants(op.x), self.wants(op.y), self.wants(op.alpha));
                    let mut gx = wx.then(|| Tensor::zeros(xv.shape()));
                    let mut gy = wy.then(|| Tensor::zeros(yv.shape()));
                    let mut galpha = vec![0.0; al.len()];
                    for e in 0..op.dst.len() {
                        let gd = g.row(op.dst[e]);
                        let (xi, yi) = (op.x_idx[e], op.y_idx[e]);
                        if let Some(gx) = gx.as_mut() {
                            gx.row_mut(xi)
                                .iter_mut()
                                .zip(gd)
                                .for_each(|(a, b)| *a += al[e] * b);
                        }
                        if let Some(gy) = gy.as_mut() {
                            gy.row_mut(yi)
                                .iter_mut()
                                .zip(gd)
                                .for_each(|(a, b)| *a -= al[e] * b);
                        }
                        if wa {
                            galpha[e] = gd
                                .iter()
                                .zip(xv.row(xi))
                                .zip(yv.row(yi))
                                .map(|((g, a), b)| g * (a - b))
                                .sum();
                        }
                    }
                    if let Some(gx) = gx {
                        self.acc(&mut grads, op.x, gx);
                    }
                    if let Some(gy) = gy {
                        self.acc(&mut grads, op.y, gy);
                    }
                    if wa {
                        self.acc(&mut grads, op.alpha, Tensor::column(galpha));
                    }
                }
            }
        }
        for (name, g) in &result {
            g.ensure_finite(&format!("gradient of `{name}`"))?;
        }
        Ok(result)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
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

/// Max-shifted softmax within each segment.
pub fn segment_softmax(x: &[f64], seg: &Segments) -> Vec<f64> {
    let mut max = vec![f64::NEG_INFINITY; seg.count];
    for (v, &s) in x.iter().zip(seg.segment.iter()) {
        max[s] = max[s].max(*v);
    }
    let e: Vec<f64> = x
        .iter()
        .zip(seg.segment.iter())
        .map(|(v, &s)| (v - max[s]).exp())
        .collect();
    let mut denom = vec![0.0; seg.count];
    for (v, &s) in e.iter().zip(seg.segment.iter()) {
        denom[s] += v;
    }
    e.iter()
        .zip(seg.segment.iter())
        .map(|(v, &s)| v / denom[s])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_gradient_matches_closed_form() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let w = tape.param("w", t(&[vec![0.5, -1.0], vec![2.0, 0.0]]));
        let y = tape.matmul_nt(x, w);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        // d/dW sum(X W^T) = 1^T X for every output row.
        assert_eq!(g["w"].data(), &[4.0, 6.0, 4.0, 6.0]);
    }

    #[test]
    fn shared_param_accumulates() {
        let mut tape = Tape::new();
        let a = tape.param("a", Tensor::scalar(3.0));
        let b = tape.param("a", Tensor::scalar(3.0));
        let p = tape.mul(a, b);
        let g = tape.backward(p).unwrap();
        assert_eq!(g["a"].data(), &[6.0]);
    }

    #[test]
    fn constants_receive_nothing() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let s = tape.sum(c);
        assert!(tape.backward(s).unwrap().is_empty());
    }

    #[test]
    fn abs_and_relu_kinks_are_zero() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::column(vec![0.0, 0.0]));
        let a = tape.abs(x);
        let r = tape.relu(x);
        let s1 = tape.add(a, r);
        let s = tape.sum(s1);
        assert_eq!(tape.backward(s).unwrap()["x"].data(), &[0.0, 0.0]);
    }

    #[test]
    fn segment_softmax_normalizes() {
        let seg = Segments {
            segment: vec![0, 0, 1, 1, 1].into(),
            count: 2,
        };
        let y = segment_softmax(&[1.0, 1.0, 0.3, -0.1, 0.05], &seg);
        assert!((y[0] - 0.5).abs() < 1e-15);
        assert!((y[2] + y[3] + y[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_fails() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::scalar(0.0));
        let l = tape.log(x);
        assert!(matches!(tape.backward(l), Err(Error::NonFinite(_))));
    }

    fn edge_graph(fused: bool) -> (f64, Grads) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut rand_t = |r: usize, c: usize| {
            let rows: Vec<Vec<f64>> = (0..r)
                .map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            t(&rows)
        };
        let (p, q, r, a) = (rand_t(4, 3), rand_t(4, 3), rand_t(2, 3), rand_t(1, 3));
        let (x, y, sink) = (rand_t(5, 3), rand_t(3, 3), rand_t(4, 3));
        let dst: Rc<[usize]> = vec![0, 0, 1, 3, 3, 3].into();
        let src: Rc<[usize]> = vec![1, 2, 0, 3, 1, 1].into();
        let rel: Rc<[usize]> = vec![0, 1, 1, 0, 0, 1].into();
        let x_idx: Rc<[usize]> = vec![4, 2, 0, 3, 1, 1].into();
        let y_idx: Rc<[usize]> = vec![2, 1, 1, 0, 0, 2].into();
        let mut tape = Tape::new();
        let [p, q, r, a, x, y] = [("p", p), ("q", q), ("r", r), ("a", a), ("x", x), ("y", y)]
            .map(|(n, v)| tape.param(n, v));
        let sink = tape.constant(sink);
        let (scores, agg) = if fused {
            let index = EdgeIndex {
                dst: dst.clone(),
                src: src.clone(),
                rel: rel.clone(),
            };
            let scores = tape.edge_scores(p, q, r, a, index, 0.2);
            let agg = tape.edge_aggregate(x, y, scores, x_idx, y_idx, dst, 4);
            (scores, agg)
        } else {
            let zp = tape.gather(p, dst.clone());
            let zq = tape.gather(q, src);
            let zr = tape.gather(r, rel);
            let z = tape.add(zp, zq);
            let z = tape.sub(z, zr);
            let z = tape.leaky_relu(z, 0.2);
            let scores = tape.matmul_nt(z, a);
            let mx = tape.gather(x, x_idx);
            let my = tape.gather(y, y_idx);
            let m = tape.sub(mx, my);
            let w = tape.mul_col(m, scores);
            (scores, tape.scatter_add(w, dst, 4))
        };
        let h = tape.tanh(agg);
        let h = tape.mul(h, sink);
        let s1 = tape.sum(h);
        let s2 = tape.sum(scores);
        let loss = tape.add(s1, s2);
        let value = tape.value(loss).data()[0];
        (value, tape.backward(loss).unwrap())
    }

    #[test]
    fn fused_edge_ops_match_composition() {
        let (v1, g1) = edge_graph(true);
        let (v2, g2) = edge_graph(false);
        assert!((v1 - v2).abs() < 1e-12);
        for name in ["p", "q", "r", "a", "x", "y"] {
            for (u, w) in g1[name].data().iter().zip(g2[name].data()) {
                assert!((u - w).abs() < 1e-12, "{name}: {u} vs {w}");
            }
        }
    }
}
