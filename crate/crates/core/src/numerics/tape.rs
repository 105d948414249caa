//! Reverse-mode gradient tape over matrix-valued nodes.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order; [`Tape::backward`] walks it once in reverse. Operand
//! shape errors are programming errors and panic.
//!
//! Graph attention needs a handful of pattern-aware primitives on top of the
//! dense ones: per-edge vectors are `nnz × 1` matrices aligned with a shared
//! CSR pattern ([`Tape::edge_gather`], [`Tape::masked_softmax`],
//! [`Tape::edge_spmm`]).

use std::sync::Arc;

use super::dense::DenseMatrix;
use super::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM { a: Arc<SparseMatrix>, x: Var },
    EdgeGather { pattern: Arc<SparseMatrix>, src: Var, dst: Var },
    EdgeSpMM { pattern: Arc<SparseMatrix>, weights: Var, x: Var },
    MaskedSoftmax { pattern: Arc<SparseMatrix>, logits: Var },
    SoftmaxRows(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScalarMul(Var, Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Elu(Var, f64),
    Mean(Var),
    Concat(Vec<Var>),
    Element(Var, usize, usize),
    CrossEntropy { logits: Var, targets: Arc<[(usize, usize)]> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: DenseMatrix,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> DenseMatrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DenseMatrix::zeros(r, c)
            }
        }
    }
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

    fn push(&mut self, op: Op, value: DenseMatrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b)).expect("matmul shape");
        self.push(Op::MatMul(a, b), value)
    }

    /// Constant sparse matrix times a tape variable.
    pub fn spmm(&mut self, a: Arc<SparseMatrix>, x: Var) -> Var {
        let value = a.spmm(self.value(x)).expect("spmm shape");
        self.push(Op::SpMM { a, x }, value)
    }

    /// Per-edge scores `src[row] + dst[col]` over the stored entries of
    /// `pattern`; returns an `nnz × 1` column.
    pub fn edge_gather(&mut self, pattern: Arc<SparseMatrix>, src: Var, dst: Var) -> Var {
        let (s, d) = (self.value(src), self.value(dst));
        assert_eq!(s.shape(), (pattern.rows(), 1), "edge_gather src shape");
        assert_eq!(d.shape(), (pattern.cols(), 1), "edge_gather dst shape");
        let mut out = Vec::with_capacity(pattern.nnz());
        for r in 0..pattern.rows() {
            let sr = s.get(r, 0);
            for &c in pattern.row(r).0 {
                out.push(sr + d.get(c, 0));
            }
        }
        let value = DenseMatrix::from_raw(pattern.nnz(), 1, out);
        self.push(Op::EdgeGather { pattern, src, dst }, value)
    }

    /// `out[r] = Σ_e weights[e] · x[col(e)]` over the entries of row `r`.
    pub fn edge_spmm(&mut self, pattern: Arc<SparseMatrix>, weights: Var, x: Var) -> Var {
        let w = self.value(weights);
        assert_eq!(w.shape(), (pattern.nnz(), 1), "edge_spmm weight shape");
        let view = pattern.with_pattern_values(w.as_slice().to_vec());
        let value = view.spmm(self.value(x)).expect("edge_spmm shape");
        self.push(Op::EdgeSpMM { pattern, weights, x }, value)
    }

    /// Softmax over the entries of each pattern row. Rows without entries
    /// produce nothing.
    pub fn masked_softmax(&mut self, pattern: Arc<SparseMatrix>, logits: Var) -> Var {
        let l = self.value(logits);
        assert_eq!(l.shape(), (pattern.nnz(), 1), "masked_softmax shape");
        let mut out = l.as_slice().to_vec();
        let ptr = pattern.indptr();
        for r in 0..pattern.rows() {
            softmax_in_place(&mut out[ptr[r]..ptr[r + 1]]);
        }
        let value = DenseMatrix::from_raw(pattern.nnz(), 1, out);
        self.push(Op::MaskedSoftmax { pattern, logits }, value)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        self.push(Op::SoftmaxRows(x), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x + y)
            .expect("add shape");
        self.push(Op::Add(a, b), value)
    }

    /// Adds a `1 × cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let r = self.value(row);
        let mut value = self.value(x).clone();
        assert_eq!(r.shape(), (1, value.cols()), "add_row shape");
        for i in 0..value.rows() {
            for (o, &b) in value.row_mut(i).iter_mut().zip(r.as_slice()) {
                *o += b;
            }
        }
        self.push(Op::AddRow(x, row), value)
    }

    /// Adds a constant that receives no gradient.
    pub fn add_const(&mut self, x: Var, c: &DenseMatrix) -> Var {
        let value = self.value(x).zip_map(c, |a, b| a + b).expect("add_const shape");
        self.push(Op::AddConst(x), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x * y)
            .expect("mul shape");
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        self.push(Op::Scale(x, s), value)
    }

    /// Multiplies every entry of `x` by the `1 × 1` variable `s`.
    pub fn scalar_mul(&mut self, s: Var, x: Var) -> Var {
        let sv = self.value(s);
        assert_eq!(sv.shape(), (1, 1), "scalar_mul expects a 1x1 scalar");
        let value = self.value(x).scale(sv.get(0, 0));
        self.push(Op::ScalarMul(s, x), value)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), value)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(Op::LeakyRelu(x, slope), value)
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        let value = self.value(x).map(|v| elu(v, alpha));
        self.push(Op::Elu(x, alpha), value)
    }

    /// Mean of all entries, as a `1 × 1` node.
    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let n = (m.rows() * m.cols()).max(1) as f64;
        let value = DenseMatrix::scalar(m.sum() / n);
        self.push(Op::Mean(x), value)
    }

    /// Horizontal concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&DenseMatrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = DenseMatrix::hstack(&refs).expect("concat rows");
        self.push(Op::Concat(parts.to_vec()), value)
    }

    pub fn element(&mut self, x: Var, r: usize, c: usize) -> Var {
        let value = DenseMatrix::scalar(self.value(x).get(r, c));
        self.push(Op::Element(x, r, c), value)
    }

    /// Mean negative log-likelihood of `softmax(logits)` at the given
    /// `(row, class)` targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: Arc<[(usize, usize)]>) -> Var {
        assert!(!targets.is_empty(), "cross_entropy needs at least one target");
        let l = self.value(logits);
        let mut total = 0.0;
        for &(r, c) in targets.iter() {
            total -= log_softmax_at(l.row(r), c);
        }
        let value = DenseMatrix::scalar(total / targets.len() as f64);
        self.push(Op::CrossEntropy { logits, targets }, value)
    }

    /// Back-propagates from the scalar node `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(DenseMatrix::scalar(1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        }
    }

    fn propagate(&self, i: usize, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.matmul_t(self.value(*b)).expect("matmul grad");
                let db = self.value(*a).t_matmul(g).expect("matmul grad");
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::SpMM { a, x } => {
                let mut dx = DenseMatrix::zeros(a.cols(), g.cols());
                for r in 0..a.rows() {
                    let (cols, vals) = a.row(r);
                    let gr = g.row(r);
                    for (&k, &v) in cols.iter().zip(vals) {
                        for (d, &gv) in dx.row_mut(k).iter_mut().zip(gr) {
                            *d += v * gv;
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::EdgeGather { pattern, src, dst } => {
                let mut ds = DenseMatrix::zeros(pattern.rows(), 1);
                let mut dd = DenseMatrix::zeros(pattern.cols(), 1);
                let mut e = 0;
                for r in 0..pattern.rows() {
                    for &c in pattern.row(r).0 {
                        let ge = g.get(e, 0);
                        ds.as_mut_slice()[r] += ge;
                        dd.as_mut_slice()[c] += ge;
                        e += 1;
                    }
                }
                accumulate(grads, *src, ds);
                accumulate(grads, *dst, dd);
            }
            Op::EdgeSpMM { pattern, weights, x } => {
                let w = self.value(*weights).as_slice();
                let xv = self.value(*x);
                let mut dw = DenseMatrix::zeros(pattern.nnz(), 1);
                let mut dx = DenseMatrix::zeros(xv.rows(), xv.cols());
                let mut e = 0;
                for r in 0..pattern.rows() {
                    let gr = g.row(r);
                    for &c in pattern.row(r).0 {
                        dw.as_mut_slice()[e] = dot(gr, xv.row(c));
                        for (d, &gv) in dx.row_mut(c).iter_mut().zip(gr) {
                            *d += w[e] * gv;
                        }
                        e += 1;
                    }
                }
                accumulate(grads, *weights, dw);
                accumulate(grads, *x, dx);
            }
            Op::MaskedSoftmax { pattern, logits } => {
                let y = out.as_slice();
                let gs = g.as_slice();
                let ptr = pattern.indptr();
                let mut dx = vec![0.0; y.len()];
                for r in 0..pattern.rows() {
                    let span = ptr[r]..ptr[r + 1];
                    softmax_backward(&y[span.clone()], &gs[span.clone()], &mut dx[span]);
                }
                accumulate(grads, *logits, DenseMatrix::from_raw(y.len(), 1, dx));
            }
            Op::SoftmaxRows(x) => {
                let mut dx = DenseMatrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    softmax_backward(out.row(r), g.row(r), dx.row_mut(r));
                }
                accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(x, row) => {
                let mut dr = DenseMatrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, &gv) in dr.as_mut_slice().iter_mut().zip(g.row(r)) {
                        *d += gv;
                    }
                }
                accumulate(grads, *x, g.clone());
                accumulate(grads, *row, dr);
            }
            Op::AddConst(x) => accumulate(grads, *x, g.clone()),
            Op::Mul(a, b) => {
                let da = g.zip_map(self.value(*b), |gv, bv| gv * bv).expect("mul grad");
                let db = g.zip_map(self.value(*a), |gv, av| gv * av).expect("mul grad");
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Scale(x, s) => accumulate(grads, *x, g.scale(*s)),
            Op::ScalarMul(s, x) => {
                let xv = self.value(*x);
                let ds = dot(g.as_slice(), xv.as_slice());
                let sv = self.value(*s).get(0, 0);
                accumulate(grads, *s, DenseMatrix::scalar(ds));
                accumulate(grads, *x, g.scale(sv));
            }
            Op::Tanh(x) => {
                let dx = g.zip_map(out, |gv, y| gv * (1.0 - y * y)).expect("tanh grad");
                accumulate(grads, *x, dx);
            }
            Op::LeakyRelu(x, slope) => {
                let dx = g
                    .zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { gv * slope })
                    .expect("leaky grad");
                accumulate(grads, *x, dx);
            }
            Op::Elu(x, alpha) => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for ((d, &xi), &yi) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()).zip(out.as_slice()) {
                    if xi <= 0.0 {
                        *d *= yi + alpha;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Mean(x) => {
                let (r, c) = self.shape(*x);
                let n = (r * c).max(1) as f64;
                accumulate(grads, *x, DenseMatrix::filled(r, c, g.get(0, 0) / n));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let mut dp = DenseMatrix::zeros(r, c);
                    for i in 0..r {
                        dp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + c]);
                    }
                    offset += c;
                    accumulate(grads, p, dp);
                }
            }
            Op::Element(x, r, c) => {
                let (rows, cols) = self.shape(*x);
                let mut dx = DenseMatrix::zeros(rows, cols);
                dx.set(*r, *c, g.get(0, 0));
                accumulate(grads, *x, dx);
            }
            Op::CrossEntropy { logits, targets } => {
                let l = self.value(*logits);
                let scale = g.get(0, 0) / targets.len() as f64;
                let mut dl = DenseMatrix::zeros(l.rows(), l.cols());
                for &(r, c) in targets.iter() {
                    let mut p = l.row(r).to_vec();
                    softmax_in_place(&mut p);
                    p[c] -= 1.0;
                    for (d, pv) in dl.row_mut(r).iter_mut().zip(p) {
                        *d += scale * pv;
                    }
                }
                accumulate(grads, *logits, dl);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, delta: DenseMatrix) {
    match &mut grads[v.0] {
        Some(g) => g.axpy(1.0, &delta).expect("gradient shape"),
        slot @ None => *slot = Some(delta),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn elu(v: f64, alpha: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        alpha * v.exp_m1()
    }
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

pub(crate) fn log_softmax_at(xs: &[f64], c: usize) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    xs[c] - lse
}

fn softmax_backward(y: &[f64], g: &[f64], dx: &mut [f64]) {
    let inner = dot(y, g);
    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(g) {
        *d = yi * (gi - inner);
    }
}
