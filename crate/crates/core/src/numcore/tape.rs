//! Reverse-mode differentiation over a fixed set of matrix operators.
//!
//! Every op records its output value eagerly; [`Tape::backward`] walks the
//! nodes in reverse creation order, so gradient accumulation order is fixed.

use crate::error::{Error, Result};
use crate::numcore::matrix::{norm, Matrix, MIN_NORM};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Backward rule for an operator defined outside this module.
pub trait CustomOp: Send + Sync {
    /// Returns one gradient per input, shaped like that input.
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, grad_out: &Matrix) -> Vec<Matrix>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    RowNormalize(Var),
    RowSoftmax(Var),
    Scale(Var, f64),
    Add(Var, Var),
    MeanRows(Var),
    VStack(Vec<Var>),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Matrix,
    op: Op,
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).row_normalize()?;
        Ok(self.push(out, Op::RowNormalize(a)))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let out = self.value(a).row_softmax();
        self.push(out, Op::RowSoftmax(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).mean_rows();
        self.push(out, Op::MeanRows(a))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::vstack(&mats)?;
        Ok(self.push(out, Op::VStack(parts.to_vec())))
    }

    pub fn custom(&mut self, inputs: &[Var], value: Matrix, op: Box<dyn CustomOp>) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), op))
    }

    /// Gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::dims(format!(
                "backward from a {:?} node, expected a scalar",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b))?;
                    let gb = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.t_matmul(self.value(*a))?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::RowNormalize(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut gx = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let n = norm(x.row(r)).max(MIN_NORM);
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = (gv - yv * proj) / n;
                        }
                    }
                    accumulate(&mut grads, *a, gx)?;
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - s);
                        }
                    }
                    accumulate(&mut grads, *a, gx)?;
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c))?,
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let inv = 1.0 / x.rows().max(1) as f64;
                    let mut gx = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        for (o, &gv) in gx.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o = gv * inv;
                        }
                    }
                    accumulate(&mut grads, *a, gx)?;
                }
                Op::VStack(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.value(*p).rows();
                        let idx: Vec<usize> = (start..start + rows).collect();
                        accumulate(&mut grads, *p, g.select_rows(&idx))?;
                        start += rows;
                    }
                }
                Op::Custom(inputs, op) => {
                    let vals: Vec<&Matrix> = inputs.iter().map(|&i| self.value(i)).collect();
                    let gs = op.backward(&vals, &node.value, &g);
                    for (i, gi) in inputs.iter().zip(gs) {
                        accumulate(&mut grads, *i, gi)?;
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `v`; `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros shaped like `like` when unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }
}
