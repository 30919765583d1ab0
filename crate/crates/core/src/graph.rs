//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records a computation as a flat list of nodes; each builder
//! method evaluates its result eagerly and pushes one node. Because inputs
//! must exist before the node that consumes them, the creation order is
//! already topological and [`Tape::backward`] is a single reverse sweep.
//!
//! Everything is batch-first: a value is a `B x F` matrix (scalars are
//! `1 x 1`). Gradients are exact up to floating point; the test suite checks
//! every operator against central finite differences.

use ndarray::{Array2, Axis, Zip};

use crate::error::{Result, UgssError};

/// Dense matrix used throughout the crate.
pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `m x n` plus a `1 x n` row, broadcast down the rows.
    AddRow(NodeId, NodeId),
    /// `m x n` times a `1 x n` row, broadcast down the rows.
    MulRow(NodeId, NodeId),
    /// `m x n` plus an `m x 1` column, broadcast across the columns.
    AddCol(NodeId, NodeId),
    /// `m x n` times an `m x 1` column, broadcast across the columns.
    MulCol(NodeId, NodeId),
    /// Multiply every entry by a `1 x 1` node.
    MulScalar(NodeId, NodeId),
    /// Add a `1 x 1` node to every entry.
    AddScalar(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Recip(NodeId),
    Abs(NodeId),
    Powf(NodeId, f64),
    Clamp(NodeId, f64, f64),
    /// Elementwise max; ties route the gradient to the first argument.
    Max(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize, usize),
    SumAll(NodeId),
    /// Mean over axis 0: `m x n -> 1 x n`.
    MeanRows(NodeId),
    /// Mean over axis 1: `m x n -> m x 1`.
    MeanCols(NodeId),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`NodeId`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`, zero matrix if the node
    /// did not influence the root.
    pub fn get(&self, id: NodeId, rows: usize, cols: usize) -> Matrix {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Matrix::zeros((rows, cols)),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.grads[id.0].take()
    }
}

/// Recorded computation.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(1024) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Insert a constant; no gradient is tracked through it.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Insert a differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Matrix::from_elem((1, 1), value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).dot(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) + self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) - self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) * self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), needs)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let value = self.value(a) + self.value(row);
        let needs = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a, row), needs)
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let value = self.value(a) * self.value(row);
        let needs = self.needs(a) || self.needs(row);
        self.push(value, Op::MulRow(a, row), needs)
    }

    pub fn add_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        debug_assert_eq!(self.value(col).ncols(), 1);
        let value = self.value(a) + self.value(col);
        let needs = self.needs(a) || self.needs(col);
        self.push(value, Op::AddCol(a, col), needs)
    }

    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        debug_assert_eq!(self.value(col).ncols(), 1);
        let value = self.value(a) * self.value(col);
        let needs = self.needs(a) || self.needs(col);
        self.push(value, Op::MulCol(a, col), needs)
    }

    pub fn mul_scalar_node(&mut self, a: NodeId, s: NodeId) -> NodeId {
        debug_assert_eq!(self.value(s).dim(), (1, 1));
        let c = self.value(s)[(0, 0)];
        let value = self.value(a) * c;
        let needs = self.needs(a) || self.needs(s);
        self.push(value, Op::MulScalar(a, s), needs)
    }

    pub fn add_scalar_node(&mut self, a: NodeId, s: NodeId) -> NodeId {
        debug_assert_eq!(self.value(s).dim(), (1, 1));
        let c = self.value(s)[(0, 0)];
        let value = self.value(a) + c;
        let needs = self.needs(a) || self.needs(s);
        self.push(value, Op::AddScalar(a, s), needs)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a) * c;
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, c), needs)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a) + c;
        let needs = self.needs(a);
        self.push(value, Op::AddConst(a), needs)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::tanh);
        let needs = self.needs(a);
        self.push(value, Op::Tanh(a), needs)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::exp);
        let needs = self.needs(a);
        self.push(value, Op::Exp(a), needs)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::ln);
        let needs = self.needs(a);
        self.push(value, Op::Ln(a), needs)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::sqrt);
        let needs = self.needs(a);
        self.push(value, Op::Sqrt(a), needs)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::recip);
        let needs = self.needs(a);
        self.push(value, Op::Recip(a), needs)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::abs);
        let needs = self.needs(a);
        self.push(value, Op::Abs(a), needs)
    }

    pub fn powf(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).mapv(|x| x.powf(c));
        let needs = self.needs(a);
        self.push(value, Op::Powf(a, c), needs)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        let needs = self.needs(a);
        self.push(value, Op::Clamp(a, lo, hi), needs)
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        Zip::from(&mut value).and(self.value(b)).for_each(|v, &b| {
            if b > *v {
                *v = b;
            }
        });
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Max(a, b), needs)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut value = Matrix::zeros((rows, total));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            value.slice_mut(ndarray::s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), needs)
    }

    pub fn slice_cols(&mut self, a: NodeId, from: usize, to: usize) -> NodeId {
        let value = self.value(a).slice(ndarray::s![.., from..to]).to_owned();
        let needs = self.needs(a);
        self.push(value, Op::SliceCols(a, from, to), needs)
    }

    pub fn slice_rows(&mut self, a: NodeId, from: usize, to: usize) -> NodeId {
        let value = self.value(a).slice(ndarray::s![from..to, ..]).to_owned();
        let needs = self.needs(a);
        self.push(value, Op::SliceRows(a, from, to), needs)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::from_elem((1, 1), self.value(a).sum());
        let needs = self.needs(a);
        self.push(value, Op::SumAll(a), needs)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let value = v.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        let needs = self.needs(a);
        self.push(value, Op::MeanRows(a), needs)
    }

    pub fn mean_cols(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let value = v.mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
        let needs = self.needs(a);
        self.push(value, Op::MeanCols(a), needs)
    }

    /// Check a node for NaN/inf; used by the unroll to abort early.
    pub fn ensure_finite(&self, id: NodeId, step: usize, tensor: &str) -> Result<()> {
        if self.value(id).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(UgssError::NonFinite { step, tensor: tensor.to_string() })
        }
    }

    /// Reverse sweep from a `1 x 1` root. Returns per-node gradients for every
    /// node with `needs_grad` reachable from the root.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::from_elem((1, 1), 1.0));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let dy = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &dy, &mut grads);
            // keep the gradient available to callers
            grads[idx] = Some(dy);
        }
        Gradients { grads }
    }

    fn accum(&self, grads: &mut [Option<Matrix>], id: NodeId, delta: Matrix) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate(&self, idx: usize, dy: &Matrix, grads: &mut Vec<Option<Matrix>>) {
        let x = |id: NodeId| &self.nodes[id.0].value;
        let y = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                self.accum(grads, *a, dy.dot(&x(*b).t()));
                self.accum(grads, *b, x(*a).t().dot(dy));
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, dy.clone());
                self.accum(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, dy.clone());
                self.accum(grads, *b, -dy.clone());
            }
            Op::Mul(a, b) => {
                self.accum(grads, *a, dy * x(*b));
                self.accum(grads, *b, dy * x(*a));
            }
            Op::AddRow(a, row) => {
                self.accum(grads, *a, dy.clone());
                self.accum(grads, *row, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulRow(a, row) => {
                self.accum(grads, *a, dy * x(*row));
                let d = (dy * x(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                self.accum(grads, *row, d);
            }
            Op::AddCol(a, col) => {
                self.accum(grads, *a, dy.clone());
                self.accum(grads, *col, dy.sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::MulCol(a, col) => {
                self.accum(grads, *a, dy * x(*col));
                let d = (dy * x(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                self.accum(grads, *col, d);
            }
            Op::MulScalar(a, s) => {
                let c = x(*s)[(0, 0)];
                self.accum(grads, *a, dy * c);
                let d = (dy * x(*a)).sum();
                self.accum(grads, *s, Matrix::from_elem((1, 1), d));
            }
            Op::AddScalar(a, s) => {
                self.accum(grads, *a, dy.clone());
                self.accum(grads, *s, Matrix::from_elem((1, 1), dy.sum()));
            }
            Op::Scale(a, c) => self.accum(grads, *a, dy * *c),
            Op::AddConst(a) => self.accum(grads, *a, dy.clone()),
            Op::Sigmoid(a) => self.accum(grads, *a, dy * &y.mapv(|s| s * (1.0 - s))),
            Op::Tanh(a) => self.accum(grads, *a, dy * &y.mapv(|t| 1.0 - t * t)),
            Op::Relu(a) => {
                let gate = x(*a).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                self.accum(grads, *a, dy * &gate);
            }
            Op::Exp(a) => self.accum(grads, *a, dy * y),
            Op::Ln(a) => self.accum(grads, *a, dy / x(*a)),
            Op::Sqrt(a) => self.accum(grads, *a, dy * &y.mapv(|s| 0.5 / s)),
            Op::Recip(a) => self.accum(grads, *a, -(dy * &y.mapv(|r| r * r))),
            Op::Abs(a) => {
                let sign = x(*a).mapv(|v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                self.accum(grads, *a, dy * &sign);
            }
            Op::Powf(a, c) => {
                if *c == 0.0 {
                    return;
                }
                let d = x(*a).mapv(|v| c * v.powf(c - 1.0));
                self.accum(grads, *a, dy * &d);
            }
            Op::Clamp(a, lo, hi) => {
                let gate = x(*a).mapv(|v| if v > *lo && v < *hi { 1.0 } else { 0.0 });
                self.accum(grads, *a, dy * &gate);
            }
            Op::Max(a, b) => {
                let av = x(*a);
                let bv = x(*b);
                let mut da = Matrix::zeros(dy.dim());
                let mut db = Matrix::zeros(dy.dim());
                Zip::from(&mut da)
                    .and(&mut db)
                    .and(dy)
                    .and(av)
                    .and(bv)
                    .for_each(|da, db, &g, &a, &b| {
                        if a >= b {
                            *da = g;
                        } else {
                            *db = g;
                        }
                    });
                self.accum(grads, *a, da);
                self.accum(grads, *b, db);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = x(p).ncols();
                    let piece = dy.slice(ndarray::s![.., at..at + w]).to_owned();
                    self.accum(grads, p, piece);
                    at += w;
                }
            }
            Op::SliceCols(a, from, to) => {
                let mut d = Matrix::zeros(x(*a).dim());
                d.slice_mut(ndarray::s![.., *from..*to]).assign(dy);
                self.accum(grads, *a, d);
            }
            Op::SliceRows(a, from, to) => {
                let mut d = Matrix::zeros(x(*a).dim());
                d.slice_mut(ndarray::s![*from..*to, ..]).assign(dy);
                self.accum(grads, *a, d);
            }
            Op::SumAll(a) => {
                let d = Matrix::from_elem(x(*a).dim(), dy[(0, 0)]);
                self.accum(grads, *a, d);
            }
            Op::MeanRows(a) => {
                let m = x(*a).nrows() as f64;
                let d = Matrix::from_shape_fn(x(*a).dim(), |(_, j)| dy[(0, j)] / m);
                self.accum(grads, *a, d);
            }
            Op::MeanCols(a) => {
                let n = x(*a).ncols() as f64;
                let d = Matrix::from_shape_fn(x(*a).dim(), |(i, _)| dy[(i, 0)] / n);
                self.accum(grads, *a, d);
            }
        }
    }
}

/// Relative error with an absolute floor, used by every gradient check in the
/// crate: exact relative error for gradients of ordinary size, an absolute
/// tolerance of `1e-7` for vanishing ones.
pub fn grad_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-1.5..1.5))
    }

    /// Finite-difference check for an arbitrary tape program: `build` maps
    /// leaf matrices to a scalar root.
    fn check_gradients(leaves: &[Matrix], build: impl Fn(&mut Tape, &[NodeId]) -> NodeId) {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = leaves.iter().map(|m| tape.leaf(m.clone())).collect();
        let root = build(&mut tape, &ids);
        let grads = tape.backward(root);

        let h = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            let g = grads.get(ids[li], leaf.nrows(), leaf.ncols());
            for r in 0..leaf.nrows() {
                for c in 0..leaf.ncols() {
                    let eval = |delta: f64| {
                        let mut tape = Tape::new();
                        let ids: Vec<NodeId> = leaves
                            .iter()
                            .enumerate()
                            .map(|(i, m)| {
                                let mut m = m.clone();
                                if i == li {
                                    m[(r, c)] += delta;
                                }
                                tape.leaf(m)
                            })
                            .collect();
                        let root = build(&mut tape, &ids);
                        tape.value(root)[(0, 0)]
                    };
                    let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                    let err = grad_rel_err(g[(r, c)], numeric);
                    assert!(
                        err < 1e-4,
                        "leaf {li} entry ({r},{c}): analytic {} vs numeric {numeric} (err {err})",
                        g[(r, c)]
                    );
                }
            }
        }
    }

    #[test]
    fn matmul_bias_chain_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 3, 4);
        let w = random_matrix(&mut rng, 4, 2);
        let b = random_matrix(&mut rng, 1, 2);
        check_gradients(&[a, w, b], |t, ids| {
            let y = t.matmul(ids[0], ids[1]);
            let y = t.add_row(y, ids[2]);
            let y = t.tanh(y);
            t.sum_all(y)
        });
    }

    #[test]
    fn elementwise_op_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 2, 5).mapv(|x| x + 2.5); // keep strictly positive
        let b = random_matrix(&mut rng, 2, 5).mapv(|x| x + 2.5);
        check_gradients(&[a.clone(), b.clone()], |t, ids| {
            let p = t.mul(ids[0], ids[1]);
            let q = t.ln(ids[0]);
            let r = t.sqrt(ids[1]);
            let s = t.recip(ids[0]);
            let u = t.powf(ids[1], 2.5);
            let acc = t.add(p, q);
            let acc = t.add(acc, r);
            let acc = t.add(acc, s);
            let acc = t.add(acc, u);
            t.sum_all(acc)
        });
        check_gradients(&[a, b], |t, ids| {
            let e = t.exp(ids[0]);
            let sg = t.sigmoid(ids[1]);
            let m = t.max(e, sg);
            let ab = t.abs(ids[0]);
            let acc = t.add(m, ab);
            t.sum_all(acc)
        });
    }

    #[test]
    fn broadcast_and_reduction_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let a = random_matrix(&mut rng, 4, 3);
        let row = random_matrix(&mut rng, 1, 3);
        let col = random_matrix(&mut rng, 4, 1);
        let s = random_matrix(&mut rng, 1, 1);
        check_gradients(&[a, row, col, s], |t, ids| {
            let y = t.mul_row(ids[0], ids[1]);
            let y = t.add_col(y, ids[2]);
            let y = t.mul_col(y, ids[2]);
            let y = t.mul_scalar_node(y, ids[3]);
            let y = t.add_scalar_node(y, ids[3]);
            let mr = t.mean_rows(y);
            let mc = t.mean_cols(y);
            let sr = t.sum_all(mr);
            let sc = t.sum_all(mc);
            t.add(sr, sc)
        });
    }

    #[test]
    fn concat_slice_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let a = random_matrix(&mut rng, 3, 2);
        let b = random_matrix(&mut rng, 3, 3);
        check_gradients(&[a, b], |t, ids| {
            let cat = t.concat_cols(&[ids[0], ids[1]]);
            let sl = t.slice_cols(cat, 1, 4);
            let sr = t.slice_rows(sl, 0, 2);
            let y = t.sigmoid(sr);
            t.sum_all(y)
        });
    }

    #[test]
    fn relu_clamp_gradients_away_from_kinks() {
        // Inputs chosen away from 0 and the clamp bounds so the numerical
        // derivative is well defined.
        let a = array![[0.7, -0.9, 1.3], [-0.4, 0.6, -1.8]];
        check_gradients(&[a], |t, ids| {
            let r = t.relu(ids[0]);
            let c = t.clamp(ids[0], -1.5, 1.1);
            let acc = t.add(r, c);
            let acc = t.tanh(acc);
            t.sum_all(acc)
        });
    }

    #[test]
    fn batchnorm_style_composite_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let x = random_matrix(&mut rng, 5, 3);
        let gamma = random_matrix(&mut rng, 1, 3).mapv(|v| v + 2.0);
        let beta = random_matrix(&mut rng, 1, 3);
        check_gradients(&[x, gamma, beta], |t, ids| {
            let mu = t.mean_rows(ids[0]);
            let neg_mu = t.scale(mu, -1.0);
            let centered = t.add_row(ids[0], neg_mu);
            let sq = t.mul(centered, centered);
            let var = t.mean_rows(sq);
            let var_eps = t.add_const(var, 1e-5);
            let std = t.sqrt(var_eps);
            let inv = t.recip(std);
            let normed = t.mul_row(centered, inv);
            let scaled = t.mul_row(normed, ids[1]);
            let out = t.add_row(scaled, ids[2]);
            let out = t.tanh(out);
            t.sum_all(out)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(array![[1.0, 2.0]]);
        let p = tape.leaf(array![[3.0, 4.0]]);
        let y = tape.mul(c, p);
        let root = tape.sum_all(y);
        let grads = tape.backward(root);
        assert_eq!(grads.get(p, 1, 2), array![[1.0, 2.0]]);
        assert!(grads.grads[c.0].is_none());
    }

    #[test]
    fn fan_in_reuse_accumulates() {
        // y = x * x must produce gradient 2x even though both inputs alias.
        let mut tape = Tape::new();
        let p = tape.leaf(array![[3.0]]);
        let y = tape.mul(p, p);
        let root = tape.sum_all(y);
        let grads = tape.backward(root);
        assert_eq!(grads.get(p, 1, 1)[(0, 0)], 6.0);
    }
}
