//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied during a forward pass together
//! with its output value. [`Tape::backward`] walks the records in reverse and
//! accumulates gradients into a [`ParamVector`] shaped like the parameters
//! that were registered with [`Tape::param`].

use crate::error::{Error, Result};
use crate::numeric::{dot, norm, Matrix, ParamLayout, ParamVector};

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Param { offset: usize },
    Const,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    SoftmaxRows(Var),
    Scale(Var, f64),
    Sub(Var, Var),
    ConcatCols(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    RowL2(Var, Var),
    RowCosine(Var, Var),
    MarginHinge {
        cos: Var,
        labels: Vec<bool>,
        epsilon: f64,
    },
    Mean(Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    layout: Option<ParamLayout>,
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::DimensionMismatch { op, detail }
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

    fn push(&mut self, op: Op, value: Matrix, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers a named parameter block as a differentiable leaf.
    pub fn param(&mut self, params: &ParamVector, name: &str) -> Result<Var> {
        match &self.layout {
            None => self.layout = Some(params.layout().clone()),
            Some(l) if l != params.layout() => {
                return Err(mismatch("param", "parameters from a different layout".into()))
            }
            Some(_) => {}
        }
        let block = params.layout().find(name).ok_or_else(|| {
            mismatch("param", format!("no parameter block named {name}"))
        })?;
        let offset = block.offset;
        let value = params.block(name)?;
        self.push(Op::Param { offset }, value, "param")
    }

    pub fn constant(&mut self, m: Matrix) -> Result<Var> {
        self.push(Op::Const, m, "constant")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), v, "matmul")
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        self.push(Op::MatMulNt(a, b), v, "matmul_nt")
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let v = self.value(x).add_row_vector(self.value(bias))?;
        self.push(Op::AddBias(x, bias), v, "add_bias")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(Op::Relu(x), v, "relu")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = softmax_rows(self.value(x));
        self.push(Op::SoftmaxRows(x), v, "softmax_rows")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).scale(c);
        self.push(Op::Scale(x, c), v, "scale")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(Op::Sub(a, b), v, "sub")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let blocks: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::hcat(&blocks)?;
        self.push(Op::ConcatCols(parts.to_vec()), v, "concat_cols")
    }

    pub fn select_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let v = self.value(x).select_rows(ids)?;
        self.push(Op::SelectRows(x, ids.to_vec()), v, "select_rows")
    }

    /// Row-wise Euclidean distance, `n × 1`.
    pub fn row_l2(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, mb) = (self.value(a), self.value(b));
        if ma.shape() != mb.shape() {
            return Err(mismatch("row_l2", format!("{:?} vs {:?}", ma.shape(), mb.shape())));
        }
        let v = Matrix::from_fn(ma.rows(), 1, |i, _| {
            ma.row(i)
                .iter()
                .zip(mb.row(i))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        });
        self.push(Op::RowL2(a, b), v, "row_l2")
    }

    /// Row-wise cosine similarity, `n × 1`. Zero-norm rows are an error.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, mb) = (self.value(a), self.value(b));
        if ma.shape() != mb.shape() {
            return Err(mismatch("row_cosine", format!("{:?} vs {:?}", ma.shape(), mb.shape())));
        }
        let mut out = Vec::with_capacity(ma.rows());
        for i in 0..ma.rows() {
            let (ra, rb) = (ma.row(i), mb.row(i));
            let (na, nb) = (norm(ra), norm(rb));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::DegenerateEmbedding { row: i });
            }
            out.push(dot(ra, rb) / (na * nb));
        }
        let v = Matrix::from_vec(ma.rows(), 1, out)?;
        self.push(Op::RowCosine(a, b), v, "row_cosine")
    }

    /// Per-sample cosine-margin loss: `1 − c` for normals, `max(0, c − ε)` for anomalies.
    pub fn margin_hinge(&mut self, cos: Var, labels: &[bool], epsilon: f64) -> Result<Var> {
        let c = self.value(cos);
        if c.cols() != 1 || c.rows() != labels.len() {
            return Err(mismatch(
                "margin_hinge",
                format!("{:?} cosines for {} labels", c.shape(), labels.len()),
            ));
        }
        let v = Matrix::from_fn(c.rows(), 1, |i, _| {
            let x = c.get(i, 0);
            if labels[i] {
                (x - epsilon).max(0.0)
            } else {
                1.0 - x
            }
        });
        self.push(
            Op::MarginHinge {
                cos,
                labels: labels.to_vec(),
                epsilon,
            },
            v,
            "margin_hinge",
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let m = self.value(x);
        if m.data().is_empty() {
            return Err(mismatch("mean", "empty input".into()));
        }
        let v = Matrix::filled(1, 1, m.data().iter().sum::<f64>() / m.data().len() as f64);
        self.push(Op::Mean(x), v, "mean")
    }

    /// Gradient of the last recorded value (which must be `1 × 1`) with respect
    /// to every registered parameter block.
    pub fn backward(&self) -> Result<ParamVector> {
        let last = self.nodes.last().ok_or(Error::NotScalar { rows: 0, cols: 0 })?;
        if last.value.shape() != (1, 1) {
            let (rows, cols) = last.value.shape();
            return Err(Error::NotScalar { rows, cols });
        }
        let layout = self.layout.clone().unwrap_or_default();
        let mut out = ParamVector::zeros(layout);
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[self.nodes.len() - 1] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param { offset } => {
                    let dst = &mut out.as_mut_slice()[*offset..*offset + g.data().len()];
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(self.value(*b))?;
                    let gb = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.matmul_tn(self.value(*a))?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddBias(x, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Relu(x) => {
                    let input = self.value(*x);
                    let mut gx = g;
                    for (gv, &iv) in gx.data_mut().iter_mut().zip(input.data()) {
                        if iv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let s = &node.value;
                    let mut gx = Matrix::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let inner = dot(g.row(r), s.row(r));
                        for ((o, &sv), &gv) in gx.row_mut(r).iter_mut().zip(s.row(r)).zip(g.row(r)) {
                            *o = sv * (gv - inner);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Scale(x, c) => accumulate(&mut grads, *x, g.scale(*c)),
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let gp = Matrix::from_fn(g.rows(), w, |i, j| g.get(i, start + j));
                        accumulate(&mut grads, *p, gp);
                        start += w;
                    }
                }
                Op::SelectRows(x, ids) => {
                    let src = self.value(*x);
                    let mut gx = Matrix::zeros(src.rows(), src.cols());
                    for (k, &i) in ids.iter().enumerate() {
                        for (o, v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::RowL2(a, b) => {
                    let (ma, mb) = (self.value(*a), self.value(*b));
                    let mut ga = Matrix::zeros(ma.rows(), ma.cols());
                    for i in 0..ma.rows() {
                        let d = node.value.get(i, 0);
                        if d == 0.0 {
                            continue;
                        }
                        let coef = g.get(i, 0) / d;
                        for ((o, x), y) in ga.row_mut(i).iter_mut().zip(ma.row(i)).zip(mb.row(i)) {
                            *o = coef * (x - y);
                        }
                    }
                    accumulate(&mut grads, *b, ga.scale(-1.0));
                    accumulate(&mut grads, *a, ga);
                }
                Op::RowCosine(a, b) => {
                    let (ma, mb) = (self.value(*a), self.value(*b));
                    let mut ga = Matrix::zeros(ma.rows(), ma.cols());
                    let mut gb = Matrix::zeros(mb.rows(), mb.cols());
                    for i in 0..ma.rows() {
                        let (ra, rb) = (ma.row(i), mb.row(i));
                        let (na, nb) = (norm(ra), norm(rb));
                        let c = node.value.get(i, 0);
                        let gi = g.get(i, 0);
                        for (k, (&x, &y)) in ra.iter().zip(rb).enumerate() {
                            ga.set(i, k, gi * (y / (na * nb) - c * x / (na * na)));
                            gb.set(i, k, gi * (x / (na * nb) - c * y / (nb * nb)));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MarginHinge {
                    cos,
                    labels,
                    epsilon,
                } => {
                    let c = self.value(*cos);
                    let gc = Matrix::from_fn(c.rows(), 1, |i, _| {
                        let local = if labels[i] {
                            if c.get(i, 0) > *epsilon {
                                1.0
                            } else {
                                0.0
                            }
                        } else {
                            -1.0
                        };
                        local * g.get(i, 0)
                    });
                    accumulate(&mut grads, *cos, gc);
                }
                Op::Mean(x) => {
                    let src = self.value(*x);
                    let share = g.get(0, 0) / src.data().len() as f64;
                    accumulate(&mut grads, *x, Matrix::filled(src.rows(), src.cols(), share));
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}
