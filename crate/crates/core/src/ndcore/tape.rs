//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and the indices of
//! its inputs. Since inputs always precede outputs, the tape order is a
//! topological order and [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::ndcore::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction / concatenation axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Along the rows: reductions produce a 1 x cols row, concatenation stacks vertically.
    Rows,
    /// Along the columns: reductions produce a rows x 1 column, concatenation is side by side.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    LogSumExp(Var, Axis),
    Concat(Vec<Var>, Axis),
    SelectRows(Var, Vec<usize>),
    /// Saved softmax probabilities alongside the labels.
    CrossEntropyRows(Var, Vec<usize>, Matrix),
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
}

/// Gradients produced by [`Tape::backward`]. Nodes that do not require
/// gradients are absent.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    pub fn contains(&self, v: Var) -> bool {
        self.get(v).is_some()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, op_name: &str) -> Result<Var> {
        value.ensure_finite(op_name)?;
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Concat(parts, _) => parts.iter().any(|p| self.nodes[p.0].requires_grad),
            _ => parents(&op).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Result<Var> {
        value.ensure_finite("leaf")?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(v, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        self.push(v, Op::Mul(a, b), "mul")
    }

    /// Adds a 1 x cols bias row to every row of `a`. The only broadcast the
    /// engine supports.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(bias))?;
        self.push(v, Op::AddRow(a, bias), "add_row")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a), "add_scalar")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a), "log")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = Matrix::scalar(self.value(a).mean());
        self.push(v, Op::Mean(a), "mean")
    }

    pub fn logsumexp(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let v = logsumexp(self.value(a), axis);
        self.push(v, Op::LogSumExp(a, axis), "logsumexp")
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = match axis {
            Axis::Cols => Matrix::hcat(&mats)?,
            Axis::Rows => Matrix::vcat(&mats)?,
        };
        self.push(v, Op::Concat(parts.to_vec(), axis), "concat")
    }

    /// Gathers rows by index (repeats allowed).
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let src = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= src.rows()) {
            return Err(Error::invalid(format!(
                "select_rows index {bad} out of range for {} rows",
                src.rows()
            )));
        }
        let v = src.select_rows(idx);
        self.push(v, Op::SelectRows(a, idx.to_vec()), "select_rows")
    }

    /// Per-row softmax cross-entropy, returned as an n x 1 column.
    pub fn cross_entropy_rows(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        if labels.len() != l.rows() {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                left: l.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= l.cols()) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {} logits",
                l.cols()
            )));
        }
        let lse = logsumexp(l, Axis::Cols);
        let mut probs = Matrix::zeros(l.rows(), l.cols());
        let mut out = Matrix::zeros(l.rows(), 1);
        for i in 0..l.rows() {
            let m = lse.get(i, 0);
            for j in 0..l.cols() {
                probs.set(i, j, (l.get(i, j) - m).exp());
            }
            out.set(i, 0, m - l.get(i, labels[i]));
        }
        self.push(
            out,
            Op::CrossEntropyRows(logits, labels.to_vec(), probs),
            "softmax_cross_entropy",
        )
    }

    /// Mean softmax cross-entropy (scalar).
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let rows = self.cross_entropy_rows(logits, labels)?;
        self.mean(rows)
    }

    /// Reverse sweep from a scalar root. Gradients accumulate additively over
    /// fan-out.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(Error::NonScalarRoot(rv.rows(), rv.cols()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter().zip(&self.nodes) {
            if let Some(g) = g {
                debug_assert_eq!(g.shape(), node.value.shape());
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, contrib: Matrix) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib)?,
            slot @ None => *slot = Some(contrib),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.requires_grad(a) {
                    let ga = g.matmul_nt(self.value(b))?;
                    self.accumulate(grads, a, ga)?;
                }
                if self.requires_grad(b) {
                    let gb = self.value(a).matmul_tn(g)?;
                    self.accumulate(grads, b, gb)?;
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.clone())?;
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.scale(-1.0))?;
            }
            &Op::Mul(a, b) => {
                if self.requires_grad(a) {
                    self.accumulate(grads, a, g.hadamard(self.value(b))?)?;
                }
                if self.requires_grad(b) {
                    self.accumulate(grads, b, g.hadamard(self.value(a))?)?;
                }
            }
            &Op::AddRow(a, bias) => {
                self.accumulate(grads, a, g.clone())?;
                if self.requires_grad(bias) {
                    self.accumulate(grads, bias, g.sum_rows())?;
                }
            }
            &Op::Scale(a, c) => self.accumulate(grads, a, g.scale(c))?,
            &Op::AddScalar(a) => self.accumulate(grads, a, g.clone())?,
            &Op::Relu(a) => {
                let ga = g.zip_map(self.value(a), "relu'", |gi, x| if x > 0.0 { gi } else { 0.0 })?;
                self.accumulate(grads, a, ga)?;
            }
            &Op::Tanh(a) => {
                let ga = g.zip_map(y, "tanh'", |gi, t| gi * (1.0 - t * t))?;
                self.accumulate(grads, a, ga)?;
            }
            &Op::Exp(a) => self.accumulate(grads, a, g.hadamard(y)?)?,
            &Op::Log(a) => {
                let ga = g.zip_map(self.value(a), "log'", |gi, x| gi / x)?;
                self.accumulate(grads, a, ga)?;
            }
            &Op::Sum(a) => {
                let (r, c) = self.value(a).shape();
                self.accumulate(grads, a, Matrix::filled(r, c, g.item()))?;
            }
            &Op::Mean(a) => {
                let (r, c) = self.value(a).shape();
                let n = (r * c) as f64;
                self.accumulate(grads, a, Matrix::filled(r, c, g.item() / n))?;
            }
            &Op::LogSumExp(a, axis) => {
                let x = self.value(a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    for j in 0..x.cols() {
                        let (out, gi) = match axis {
                            Axis::Rows => (y.get(0, j), g.get(0, j)),
                            Axis::Cols => (y.get(i, 0), g.get(i, 0)),
                        };
                        ga.set(i, j, gi * (x.get(i, j) - out).exp());
                    }
                }
                self.accumulate(grads, a, ga)?;
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.value(p).shape();
                    if self.requires_grad(p) {
                        let piece = match axis {
                            Axis::Cols => {
                                let mut m = Matrix::zeros(pr, pc);
                                for r in 0..pr {
                                    m.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + pc]);
                                }
                                m
                            }
                            Axis::Rows => Matrix::from_vec(
                                pr,
                                pc,
                                g.data()[offset * pc..(offset + pr) * pc].to_vec(),
                            )?,
                        };
                        self.accumulate(grads, p, piece)?;
                    }
                    offset += match axis {
                        Axis::Cols => pc,
                        Axis::Rows => pr,
                    };
                }
            }
            Op::SelectRows(a, idx) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (dst, src) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *dst += src;
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::CrossEntropyRows(logits, labels, probs) => {
                let mut ga = probs.clone();
                for (i, &yl) in labels.iter().enumerate() {
                    let gi = g.get(i, 0);
                    let row = ga.row_mut(i);
                    row[yl] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= gi;
                    }
                }
                self.accumulate(grads, *logits, ga)?;
            }
        }
        Ok(())
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        &Op::MatMul(a, b) | &Op::Add(a, b) | &Op::Sub(a, b) | &Op::Mul(a, b) | &Op::AddRow(a, b) => {
            vec![a, b]
        }
        &Op::Scale(a, _)
        | &Op::AddScalar(a)
        | &Op::Relu(a)
        | &Op::Tanh(a)
        | &Op::Exp(a)
        | &Op::Log(a)
        | &Op::Sum(a)
        | &Op::Mean(a)
        | &Op::LogSumExp(a, _) => vec![a],
        Op::Concat(parts, _) => parts.clone(),
        Op::SelectRows(a, _) => vec![*a],
        Op::CrossEntropyRows(a, _, _) => vec![*a],
    }
}

/// Max-shifted log-sum-exp along `axis`.
pub fn logsumexp(x: &Matrix, axis: Axis) -> Matrix {
    match axis {
        Axis::Cols => {
            let mut out = Matrix::zeros(x.rows(), 1);
            for i in 0..x.rows() {
                out.set(i, 0, logsumexp_slice(x.row(i)));
            }
            out
        }
        Axis::Rows => {
            let mut out = Matrix::zeros(1, x.cols());
            let mut col = vec![0.0; x.rows()];
            for j in 0..x.cols() {
                for (i, c) in col.iter_mut().enumerate() {
                    *c = x.get(i, j);
                }
                out.set(0, j, logsumexp_slice(&col));
            }
            out
        }
    }
}

pub fn logsumexp_slice(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}
