//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A `Tape` records every operation of one forward pass; `backward` then
//! walks it in reverse. Tapes are cheap and meant to be rebuilt per step.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::matrix::{gemm, Matrix};

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MulScalar(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Elu(usize),
    Tanh(usize),
    Softplus(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    LeakyRelu(usize, f64),
    Concat(Vec<usize>),
    VStack(Vec<usize>),
    Slice(usize, usize),
    Gather(usize, Rc<Vec<usize>>),
    Sum(usize),
    SumCols(usize),
    Transpose(usize),
    RowSoftmax(usize),
    Attention(Box<AttentionOp>),
}

#[derive(Debug)]
struct AttentionOp {
    values: usize,
    src: usize,
    dst: usize,
    graph: Rc<AttentionGraph>,
    // per node, coefficients aligned with graph.neighbors[i]
    alpha: Vec<Vec<f64>>,
    // pre-activation scores s_i + t_j, same layout
    pre: Vec<Vec<f64>>,
    slope: f64,
}

/// Neighbourhoods (self included) with additive log-prior on each logit.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGraph {
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.idx)
    }
}

/// Gradients of every node after `Tape::backward`.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of a leaf. Interior nodes report zeros once consumed.
    pub fn of(&self, v: Var<'_>) -> Matrix {
        match &self.grads[v.idx] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.idx];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Matrix, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.leaf(value)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.leaf(Matrix::scalar(v))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn val(&self, idx: usize) -> Ref<'_, Matrix> {
        Ref::map(self.nodes.borrow(), |n| &n[idx].value)
    }

    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        let value = {
            let nodes = self.nodes.borrow();
            let mats: Vec<&Matrix> = parts.iter().map(|p| &nodes[p.idx].value).collect();
            Matrix::hcat(&mats)
        };
        self.push(value, Op::Concat(parts.iter().map(|p| p.idx).collect()))
    }

    /// Vertical concatenation (equal column counts).
    pub fn vstack<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        let value = {
            let nodes = self.nodes.borrow();
            let cols = parts.first().map_or(0, |p| nodes[p.idx].value.cols());
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let m = &nodes[p.idx].value;
                assert_eq!(m.cols(), cols, "vstack column mismatch");
                data.extend_from_slice(m.as_slice());
                rows += m.rows();
            }
            Matrix::from_vec(rows, cols, data)
        };
        self.push(value, Op::VStack(parts.iter().map(|p| p.idx).collect()))
    }

    /// Softmax attention over neighbourhoods:
    /// `out_i = Σ_j α_ij · values_j`,
    /// `α_i· = softmax_j(leaky_relu(src_i + dst_j) + logprior_ij)`.
    pub fn graph_attention<'t>(
        &'t self,
        values: Var<'t>,
        src: Var<'t>,
        dst: Var<'t>,
        graph: Rc<AttentionGraph>,
        slope: f64,
    ) -> Var<'t> {
        let (out, alpha, pre) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[values.idx].value;
            let s = &nodes[src.idx].value;
            let t = &nodes[dst.idx].value;
            let n = v.rows();
            assert_eq!(graph.neighbors.len(), n, "attention graph size");
            assert_eq!(s.shape(), (n, 1));
            assert_eq!(t.shape(), (n, 1));
            let f = v.cols();
            let mut out = Matrix::zeros(n, f);
            let mut alpha = Vec::with_capacity(n);
            let mut pre = Vec::with_capacity(n);
            for (i, nb) in graph.neighbors.iter().enumerate() {
                let p: Vec<f64> = nb.iter().map(|&(j, _)| s.get(i, 0) + t.get(j, 0)).collect();
                let logits: Vec<f64> = p
                    .iter()
                    .zip(nb)
                    .map(|(&x, &(_, lw))| leaky(x, slope) + lw)
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = ex.iter().sum();
                let a: Vec<f64> = ex.iter().map(|e| e / z).collect();
                let row = out.row_mut(i);
                for (&(j, _), &aij) in nb.iter().zip(&a) {
                    for (o, x) in row.iter_mut().zip(v.row(j)) {
                        *o += aij * x;
                    }
                }
                alpha.push(a);
                pre.push(p);
            }
            (out, alpha, pre)
        };
        self.push(
            out,
            Op::Attention(Box::new(AttentionOp {
                values: values.idx,
                src: src.idx,
                dst: dst.idx,
                graph,
                alpha,
                pre,
                slope,
            })),
        )
    }

    /// Attention coefficients recorded by a `graph_attention` node.
    pub fn attention_coefficients(&self, v: Var<'_>) -> Option<Vec<Vec<f64>>> {
        match &self.nodes.borrow()[v.idx].op {
            Op::Attention(a) => Some(a.alpha.clone()),
            _ => None,
        }
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[output.idx].value.shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.idx] = Some(Matrix::scalar(1.0));
        for idx in (0..=output.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let y = &node.value;
            let mut acc = |target: usize, delta: Matrix| match &mut grads[target] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            };
            let v = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (va, vb) = (v(*a), v(*b));
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    gemm(false, true, &g, vb, 0.0, &mut ga);
                    let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                    gemm(true, false, va, &g, 0.0, &mut gb);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|x| -x));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(v(*b), |x, y| x * y));
                    acc(*b, g.zip_map(v(*a), |x, y| x * y));
                }
                Op::Div(a, b) => {
                    let vb = v(*b);
                    acc(*a, g.zip_map(vb, |x, y| x / y));
                    // d(a/b)/db = -(a/b)/b
                    let q = y.zip_map(vb, |yy, bb| yy / bb);
                    acc(*b, g.zip_map(&q, |x, qq| -x * qq));
                }
                Op::AddRow(a, r) => {
                    let cols = g.cols();
                    let mut gr = Matrix::zeros(1, cols);
                    for i in 0..g.rows() {
                        for (o, x) in gr.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(*r, gr);
                    acc(*a, g);
                }
                Op::MulRow(a, r) => {
                    let (va, vr) = (v(*a), v(*r));
                    let mut ga = g.clone();
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            ga.set(i, j, g.get(i, j) * vr.get(0, j));
                            gr.set(0, j, gr.get(0, j) + g.get(i, j) * va.get(i, j));
                        }
                    }
                    acc(*a, ga);
                    acc(*r, gr);
                }
                Op::MulScalar(a, s) => {
                    let (va, sv) = (v(*a), v(*s).scalar_value());
                    let gs: f64 = g.as_slice().iter().zip(va.as_slice()).map(|(x, y)| x * y).sum();
                    acc(*a, g.map(|x| x * sv));
                    acc(*s, Matrix::scalar(gs));
                }
                Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
                Op::Offset(a) => acc(*a, g),
                Op::Elu(a) => acc(*a, g.zip_map(v(*a), |x, z| if z > 0.0 { x } else { x * z.exp() })),
                Op::Tanh(a) => acc(*a, g.zip_map(y, |x, t| x * (1.0 - t * t))),
                Op::Softplus(a) => acc(*a, g.zip_map(v(*a), |x, z| x * sigmoid(z))),
                Op::Sigmoid(a) => acc(*a, g.zip_map(y, |x, s| x * s * (1.0 - s))),
                Op::Exp(a) => acc(*a, g.zip_map(y, |x, e| x * e)),
                Op::Log(a) => acc(*a, g.zip_map(v(*a), |x, z| x / z)),
                Op::Square(a) => acc(*a, g.zip_map(v(*a), |x, z| 2.0 * x * z)),
                Op::LeakyRelu(a, s) => {
                    let s = *s;
                    acc(*a, g.zip_map(v(*a), |x, z| if z > 0.0 { x } else { x * s }))
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = v(p).cols();
                        let part = Matrix::from_fn(g.rows(), w, |i, j| g.get(i, offset + j));
                        offset += w;
                        acc(p, part);
                    }
                }
                Op::VStack(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = v(p).shape();
                        let part = Matrix::from_vec(r, c, g.as_slice()[offset * c..(offset + r) * c].to_vec());
                        offset += r;
                        acc(p, part);
                    }
                }
                Op::Slice(a, start) => {
                    let va = v(*a);
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            ga.set(i, start + j, g.get(i, j));
                        }
                    }
                    acc(*a, ga);
                }
                Op::Gather(a, idx) => {
                    let va = v(*a);
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    for (k, &r) in idx.iter().enumerate() {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    acc(*a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = v(*a).shape();
                    acc(*a, Matrix::filled(r, c, g.scalar_value()));
                }
                Op::SumCols(a) => {
                    let (r, c) = v(*a).shape();
                    acc(*a, Matrix::from_fn(r, c, |i, _| g.get(i, 0)));
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::RowSoftmax(a) => {
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(x, p)| x * p).sum();
                        for j in 0..y.cols() {
                            ga.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    acc(*a, ga);
                }
                Op::Attention(op) => {
                    let vals = v(op.values);
                    let n = vals.rows();
                    let mut gv = Matrix::zeros(n, vals.cols());
                    let mut gs = Matrix::zeros(n, 1);
                    let mut gt = Matrix::zeros(n, 1);
                    for (i, nb) in op.graph.neighbors.iter().enumerate() {
                        let gi = g.row(i);
                        let a = &op.alpha[i];
                        let da: Vec<f64> = nb
                            .iter()
                            .map(|&(j, _)| gi.iter().zip(vals.row(j)).map(|(x, w)| x * w).sum())
                            .collect();
                        let mean: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                        for (k, &(j, _)) in nb.iter().enumerate() {
                            for (o, x) in gv.row_mut(j).iter_mut().zip(gi) {
                                *o += a[k] * x;
                            }
                            let de = a[k] * (da[k] - mean);
                            let p = op.pre[i][k];
                            let dp = if p > 0.0 { de } else { de * op.slope };
                            gs.set(i, 0, gs.get(i, 0) + dp);
                            gt.set(j, 0, gt.get(j, 0) + dp);
                        }
                    }
                    acc(op.values, gv);
                    acc(op.src, gs);
                    acc(op.dst, gt);
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Gradients { grads, shapes }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Ref<'t, Matrix> {
        self.tape.val(self.idx)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn scalar_value(&self) -> f64 {
        self.value().scalar_value()
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let value = self.value().map(f);
        self.tape.push(value, op)
    }

    fn binary(self, other: Var<'t>, f: impl Fn(f64, f64) -> f64, op: Op) -> Var<'t> {
        let value = self.value().zip_map(&other.value(), f);
        self.tape.push(value, op)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let value = self.value().matmul(&other.value());
        self.tape.push(value, Op::MatMul(self.idx, other.idx))
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, |a, b| a + b, Op::Add(self.idx, other.idx))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, |a, b| a - b, Op::Sub(self.idx, other.idx))
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, |a, b| a * b, Op::Mul(self.idx, other.idx))
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, |a, b| a / b, Op::Div(self.idx, other.idx))
    }

    /// Add a `1 × cols` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        let value = {
            let (a, r) = (self.value(), row.value());
            assert_eq!(r.shape(), (1, a.cols()), "add_row shape");
            Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) + r.get(0, j))
        };
        self.tape.push(value, Op::AddRow(self.idx, row.idx))
    }

    /// Multiply every row elementwise by a `1 × cols` row.
    pub fn mul_row(self, row: Var<'t>) -> Var<'t> {
        let value = {
            let (a, r) = (self.value(), row.value());
            assert_eq!(r.shape(), (1, a.cols()), "mul_row shape");
            Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) * r.get(0, j))
        };
        self.tape.push(value, Op::MulRow(self.idx, row.idx))
    }

    /// Multiply by a `1 × 1` variable.
    pub fn mul_scalar(self, s: Var<'t>) -> Var<'t> {
        let k = s.scalar_value();
        self.unary(|x| x * k, Op::MulScalar(self.idx, s.idx))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        self.unary(|x| x * k, Op::Scale(self.idx, k))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn offset(self, k: f64) -> Var<'t> {
        self.unary(|x| x + k, Op::Offset(self.idx))
    }

    pub fn elu(self) -> Var<'t> {
        self.unary(elu, Op::Elu(self.idx))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, Op::Tanh(self.idx))
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(softplus, Op::Softplus(self.idx))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid, Op::Sigmoid(self.idx))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, Op::Exp(self.idx))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(f64::ln, Op::Log(self.idx))
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, Op::Square(self.idx))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(|x| leaky(x, slope), Op::LeakyRelu(self.idx, slope))
    }

    /// Columns `[start, start + len)`.
    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        let value = {
            let a = self.value();
            assert!(start + len <= a.cols(), "slice out of range");
            Matrix::from_fn(a.rows(), len, |i, j| a.get(i, start + j))
        };
        self.tape.push(value, Op::Slice(self.idx, start))
    }

    pub fn gather_rows(self, idx: Rc<Vec<usize>>) -> Var<'t> {
        let value = self.value().select_rows(&idx);
        self.tape.push(value, Op::Gather(self.idx, idx))
    }

    pub fn sum(self) -> Var<'t> {
        let value = Matrix::scalar(self.value().sum());
        self.tape.push(value, Op::Sum(self.idx))
    }

    pub fn mean(self) -> Var<'t> {
        let (r, c) = self.shape();
        self.sum().scale(1.0 / (r * c).max(1) as f64)
    }

    /// Row sums as an `rows × 1` column.
    pub fn sum_cols(self) -> Var<'t> {
        let value = {
            let a = self.value();
            Matrix::from_fn(a.rows(), 1, |i, _| a.row(i).iter().sum())
        };
        self.tape.push(value, Op::SumCols(self.idx))
    }

    pub fn transpose(self) -> Var<'t> {
        let value = self.value().transpose();
        self.tape.push(value, Op::Transpose(self.idx))
    }

    pub fn row_softmax(self) -> Var<'t> {
        let value = {
            let a = self.value();
            let mut out = Matrix::zeros(a.rows(), a.cols());
            for i in 0..a.rows() {
                let m = a.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = a.row(i).iter().map(|x| (x - m).exp()).sum();
                for j in 0..a.cols() {
                    out.set(i, j, (a.get(i, j) - m).exp() / z);
                }
            }
            out
        };
        self.tape.push(value, Op::RowSoftmax(self.idx))
    }
}

impl<'t> Var<'t> {
    /// Horizontal concatenation of `self` and `other`.
    pub fn concat_with(self, other: Var<'t>) -> Var<'t> {
        self.tape.concat(&[self, other])
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of `f` at `x` against the tape gradient.
    fn check(x0: Matrix, f: impl for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>) {
        let tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = f(&tape, x);
        let g = tape.backward(y).of(x);
        let eps = 1e-6;
        for k in 0..x0.as_slice().len() {
            let eval = |d: f64| {
                let mut xp = x0.clone();
                xp.as_mut_slice()[k] += d;
                let t = Tape::new();
                let xv = t.leaf(xp);
                f(&t, xv).scalar_value()
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let an = g.as_slice()[k];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "component {k}: fd {fd} vs analytic {an}"
            );
        }
    }

    fn sample(r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin() * 1.3 + 0.1)
    }

    #[test]
    fn elementwise_gradients() {
        check(sample(3, 4), |_, x| x.elu().sum());
        check(sample(3, 4), |_, x| x.tanh().square().sum());
        check(sample(3, 4), |_, x| x.softplus().ln().sum());
        check(sample(3, 4), |_, x| x.sigmoid().mul(x).sum());
        check(sample(3, 4), |_, x| x.exp().scale(0.5).offset(2.0).sum());
        check(sample(3, 4), |_, x| x.leaky_relu(0.2).sum());
        check(sample(3, 4), |_, x| x.softplus().offset(0.1).div(x.exp()).sum());
    }

    #[test]
    fn structural_gradients() {
        let w = sample(4, 2);
        check(sample(3, 4), move |t, x| {
            let w = t.constant(w.clone());
            x.matmul(w).tanh().sum()
        });
        check(sample(3, 4), |t, x| {
            let r = t.constant(sample(1, 4));
            x.add_row(r).mul_row(x.slice_cols(0, 4).gather_rows(Rc::new(vec![1])))
                .sum()
        });
        check(sample(3, 4), |_, x| {
            x.concat_with(x.slice_cols(1, 2)).transpose().row_softmax().square().sum()
        });
        check(sample(3, 4), |_, x| x.gather_rows(Rc::new(vec![2, 0, 2])).sum_cols().square().sum());
        check(sample(1, 1), |t, s| t.constant(sample(2, 3)).mul_scalar(s).square().sum());
        check(sample(2, 2), |_, x| x.matmul(x).sub(x).mean());
        check(sample(2, 3), |t, x| t.vstack(&[x, x.tanh(), x.gather_rows(Rc::new(vec![1]))]).square().sum());
    }

    #[test]
    fn attention_gradients_and_normalisation() {
        let graph = Rc::new(AttentionGraph {
            neighbors: vec![
                vec![(0, 0.0), (1, -0.3), (2, -1.0)],
                vec![(1, 0.0), (0, -0.3)],
                vec![(2, 0.0), (0, -1.0)],
            ],
        });
        let g2 = graph.clone();
        check(sample(3, 5), move |t, x| {
            let s = x.slice_cols(0, 1);
            let d = x.slice_cols(1, 1).scale(-0.7);
            t.graph_attention(x, s, d, g2.clone(), 0.2).tanh().sum()
        });
        let tape = Tape::new();
        let x = tape.leaf(sample(3, 5));
        let out = tape.graph_attention(x, x.slice_cols(0, 1), x.slice_cols(2, 1), graph, 0.2);
        for row in tape.attention_coefficients(out).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-9);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
