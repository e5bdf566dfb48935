//! Reverse-mode differentiation over a per-forward tape.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value and the handles of its inputs. [`Tape::backward`] walks the
//! nodes in reverse creation order, which is a valid topological order,
//! and accumulates adjoints. Parameter leaves push their adjoints into the
//! [`ParamStore`]; every other node keeps its own accumulated gradient on
//! the tape, readable through [`Tape::grad`].
//!
//! Gradients accumulate across calls. Zero them with
//! [`ParamStore::zero_grads`] (parameters) or build a fresh tape.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather { param: ParamId, ids: Vec<usize> },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Matrix),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    MaxRows { input: Var, argmax: Vec<usize> },
    Sum(Var),
    CrossEntropy { logits: Var, gold: usize, probs: Matrix },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a non-parameter node, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        self.push(t.value.clone(), Op::Param(id), t.requires_grad)
    }

    /// Rows `ids` of a parameter table, in order. Repeated ids are allowed.
    pub fn gather_rows(&mut self, store: &ParamStore, id: ParamId, ids: &[usize]) -> Result<Var> {
        let t = store.get(id);
        let cols = t.value.cols();
        let mut out = Matrix::zeros(ids.len(), cols);
        for (r, &i) in ids.iter().enumerate() {
            if i >= t.value.rows() {
                return Err(Error::contract(format!(
                    "row {i} out of range for {} with {} rows",
                    t.name,
                    t.value.rows()
                )));
            }
            out.row_mut(r).copy_from_slice(t.value.row(i));
        }
        let rg = t.requires_grad;
        Ok(self.push(
            out,
            Op::Gather {
                param: id,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds a `1 × k` row to every row of an `n × k` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        if self.shape(row) != (1, k) {
            return Err(Error::Shape {
                op: "add_row",
                left: (n, k),
                right: self.shape(row),
            });
        }
        let mut value = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for i in 0..n {
            for (x, b) in value.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .as_slice()
            .iter()
            .zip(self.value(b).as_slice())
            .map(|(x, y)| x * y)
            .collect();
        let (r, c) = self.shape(a);
        let value = Matrix::from_vec(r, c, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        if self.shape(a) != mask.shape() {
            return Err(Error::Shape {
                op: "mul_const",
                left: self.shape(a),
                right: mask.shape(),
            });
        }
        let data = self
            .value(a)
            .as_slice()
            .iter()
            .zip(mask.as_slice())
            .map(|(x, m)| x * m)
            .collect();
        let (r, c) = mask.shape();
        let value = Matrix::from_vec(r, c, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MulConst(a, mask), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.cols() == 0 {
            return Err(Error::Numeric {
                op: "softmax_rows",
                msg: "rows must have at least one column".into(),
            });
        }
        if !m.is_finite() {
            return Err(Error::Numeric {
                op: "softmax_rows",
                msg: "non-finite input".into(),
            });
        }
        let mut value = m.clone();
        for i in 0..value.rows() {
            softmax_in_place(value.row_mut(i));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::contract("concat_cols needs at least one part"));
        };
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: self.shape(p),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                value.row_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Coordinate-wise maximum over the selected rows, giving a `1 × k` row.
    /// Ties resolve to the earliest listed row.
    pub fn max_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::contract("max_rows over an empty row set"));
        }
        let m = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= m.rows()) {
            return Err(Error::contract(format!(
                "max_rows: row {bad} out of range for {} rows",
                m.rows()
            )));
        }
        let k = m.cols();
        let mut best = m.row(rows[0]).to_vec();
        let mut argmax = vec![rows[0]; k];
        for &r in &rows[1..] {
            for (j, &x) in m.row(r).iter().enumerate() {
                if x > best[j] {
                    best[j] = x;
                    argmax[j] = r;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Matrix::row_vector(&best),
            Op::MaxRows { input: a, argmax },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// `-log softmax(logits)[gold]` for a `1 × C` logit row, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != 1 {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: z.shape(),
                right: (1, z.cols()),
            });
        }
        let c = z.cols();
        if c < 2 {
            return Err(Error::contract(format!("cross_entropy needs C >= 2, got {c}")));
        }
        if gold >= c {
            return Err(Error::contract(format!("gold label {gold} out of range for C = {c}")));
        }
        if !z.is_finite() {
            return Err(Error::Numeric {
                op: "cross_entropy",
                msg: "non-finite logits".into(),
            });
        }
        let zs = z.as_slice();
        let max = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + zs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - zs[gold];
        let mut probs = z.clone();
        softmax_in_place(probs.as_mut_slice());
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::CrossEntropy {
                logits,
                gold,
                probs,
            },
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    /// Back-propagates from a scalar `loss`, accumulating into parameter
    /// gradients in `store` and into the tape-held gradients of other nodes.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match &self.grads[i] {
                Some(_) => self.grads[i].as_mut().unwrap().add_assign(&g),
                None => self.grads[i] = Some(g.clone()),
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => store.get_mut(*id).grad.add_assign(&g),
                Op::Gather { param, ids } => {
                    let pg = &mut store.get_mut(*param).grad;
                    for (r, &row) in ids.iter().enumerate() {
                        for (dst, src) in pg.row_mut(row).iter_mut().zip(g.row(r)) {
                            *dst += src;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a.0].requires_grad {
                        let da = g.matmul(&self.nodes[b.0].value.transpose())?;
                        accumulate(&mut adj, a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db = self.nodes[a.0].value.transpose().matmul(&g)?;
                        accumulate(&mut adj, b, db);
                    }
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::AddRow(a, row) => {
                    let mut dr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, x) in dr.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut adj, *a, g);
                    accumulate(&mut adj, *row, dr);
                }
                Op::Mul(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let da = elementwise(&g, vb);
                    let db = elementwise(&g, va);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::MulConst(a, mask) => accumulate(&mut adj, *a, elementwise(&g, mask)),
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut adj, *a, g.map(|x| x * s));
                }
                Op::Relu(a) => {
                    let input = &self.nodes[a.0].value;
                    let mut d = g;
                    for (x, &inp) in d.as_mut_slice().iter_mut().zip(input.as_slice()) {
                        if inp <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((dst, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *dst = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    let parts = parts.clone();
                    for p in parts {
                        let (rows, cols) = self.nodes[p.0].value.shape();
                        if self.nodes[p.0].requires_grad {
                            let mut d = Matrix::zeros(rows, cols);
                            for r in 0..rows {
                                d.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                            }
                            accumulate(&mut adj, p, d);
                        }
                        off += cols;
                    }
                }
                Op::MaxRows { input, argmax } => {
                    let (rows, cols) = self.nodes[input.0].value.shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for (j, &r) in argmax.iter().enumerate() {
                        d[(r, j)] += g.as_slice()[j];
                    }
                    accumulate(&mut adj, *input, d);
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    accumulate(&mut adj, *a, Matrix::filled(r, c, g.as_slice()[0]));
                }
                Op::CrossEntropy {
                    logits,
                    gold,
                    probs,
                } => {
                    let s = g.as_slice()[0];
                    let mut d = probs.clone();
                    d.as_mut_slice()[*gold] -= 1.0;
                    d.scale_in_place(s);
                    accumulate(&mut adj, *logits, d);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn elementwise(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows)
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let a = t.constant(m(&[&[0.0, 0.0], &[2f64.ln(), 0.0]]));
        let s = t.softmax_rows(a).unwrap();
        let v = t.value(s);
        assert!((v[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((v[(1, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((v[(1, 1)] - 1.0 / 3.0).abs() < 1e-12);

        let b = t.constant(m(&[&[1.0, 1.0, 1.0]]));
        let s = t.softmax_rows(b).unwrap();
        for &x in t.value(s).as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut t = Tape::new();
        let a = t.constant(m(&[&[f64::NAN, 0.0]]));
        assert!(matches!(t.softmax_rows(a), Err(Error::Numeric { .. })));
    }

    #[test]
    fn softmax_survives_large_scores() {
        let mut t = Tape::new();
        let a = t.constant(m(&[&[1000.0, 999.0, -1e6]]));
        let s = t.softmax_rows(a).unwrap();
        let row = t.value(s).row(0).to_vec();
        assert!(row.iter().all(|x| x.is_finite()));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relu_values_and_gradient() {
        let mut store = ParamStore::new();
        let mut t = Tape::new();
        let a = t.leaf(m(&[&[-1.0, 0.0, 2.0]]), false);
        let r = t.relu(a);
        assert_eq!(t.value(r).as_slice(), &[0.0, 0.0, 2.0]);

        let x = t.leaf(m(&[&[-1.0, 2.0]]), true);
        let r = t.relu(x);
        let s = t.sum(r);
        t.backward(s, &mut store).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn concat_shapes_and_singleton() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 1));
        let c = t.concat_cols(&[a, b]).unwrap();
        assert_eq!(t.shape(c), (2, 4));
        let s = t.concat_cols(&[a]).unwrap();
        assert_eq!(t.value(s), t.value(a));
        let bad = t.constant(Matrix::zeros(3, 1));
        assert!(matches!(t.concat_cols(&[a, bad]), Err(Error::Shape { .. })));
        assert!(t.concat_cols(&[]).is_err());
    }

    #[test]
    fn backward_needs_scalar() {
        let mut store = ParamStore::new();
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 2), true);
        assert!(matches!(t.backward(a, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn sum_of_wx_gives_broadcast_of_x() {
        let mut store = ParamStore::new();
        let w = store.add("w", m(&[&[0.3, -0.2, 0.5], &[1.0, 2.0, -1.0]]));
        let mut t = Tape::new();
        let wv = t.param(&store, w);
        let x = t.constant(m(&[&[1.0], &[2.0], &[3.0]]));
        let y = t.matmul(wv, x).unwrap();
        let loss = t.sum(y);
        t.backward(loss, &mut store).unwrap();
        assert_eq!(
            store.grad(w),
            &m(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]])
        );
    }

    #[test]
    fn unrelated_parameter_has_zero_grad_and_accumulation_doubles() {
        let mut store = ParamStore::new();
        let w = store.add("w", m(&[&[2.0]]));
        let p = store.add("p", m(&[&[5.0]]));
        let mut t = Tape::new();
        let wv = t.param(&store, w);
        let _pv = t.param(&store, p);
        let sq = t.mul(wv, wv).unwrap();
        let loss = t.sum(sq);
        t.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w).as_slice(), &[4.0]);
        assert_eq!(store.grad(p).as_slice(), &[0.0]);
        t.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w).as_slice(), &[8.0]);
        assert_eq!(t.grad(wv).unwrap().as_slice(), &[8.0]);
    }

    #[test]
    fn constants_never_collect_gradient() {
        let mut store = ParamStore::new();
        let mut t = Tape::new();
        let c = t.constant(m(&[&[1.0, 2.0]]));
        let x = t.leaf(m(&[&[3.0, 4.0]]), true);
        let p = t.mul(c, x).unwrap();
        let s = t.sum(p);
        t.backward(s, &mut store).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(x).unwrap().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::zeros(1, 4));
        let l = t.cross_entropy(z, 2).unwrap();
        assert!((t.scalar(l) - 4f64.ln()).abs() < 1e-12);

        let z = t.constant(m(&[&[1e6, 0.0, 0.0]]));
        let l = t.cross_entropy(z, 0).unwrap();
        assert!(t.scalar(l).abs() < 1e-12);

        // log(e^1 + e^2) - 1
        let z = t.constant(m(&[&[1.0, 2.0]]));
        let l = t.cross_entropy(z, 0).unwrap();
        let expected = (1f64.exp() + 2f64.exp()).ln() - 1.0;
        assert!((expected - 1.3133).abs() < 1e-4);
        assert!((t.scalar(l) - expected).abs() < 1e-12);

        assert!(matches!(t.cross_entropy(z, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn max_rows_picks_coordinatewise_maximum() {
        let mut t = Tape::new();
        let h = t.constant(m(&[&[1.0, 0.0], &[0.0, 2.0], &[3.0, -1.0]]));
        let p = t.max_rows(h, &[1, 2]).unwrap();
        assert_eq!(t.value(p).as_slice(), &[3.0, 2.0]);
        assert!(t.max_rows(h, &[]).is_err());
    }
}
