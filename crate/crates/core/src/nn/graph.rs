//! Eager tape for reverse-mode differentiation over 2-D tensors.
//!
//! Every op evaluates immediately and appends a node; [`Graph::backward`]
//! walks the tape in reverse. Accumulation follows tape order, so gradients
//! are bitwise reproducible.

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + row` with `row` broadcast over rows.
    AddRow(Var, Var),
    /// `a * row` with `row` broadcast over rows.
    MulRow(Var, Var),
    /// `scale * a + shift`.
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    Log(Var),
    Recip(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    Sum(Var),
    /// Value produced outside the differentiable op set.
    Opaque(String, Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
}

/// Adjoints of every node reached from the loss.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient per store entry; parameters the loss never touched get zeros.
    pub fn for_params(&self, graph: &Graph, store: &ParamStore) -> Vec<Tensor> {
        store
            .iter()
            .map(|(id, _, t)| {
                graph
                    .bound
                    .get(id.0)
                    .copied()
                    .flatten()
                    .and_then(|v| self.grads[v.0].clone())
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
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

    /// Which side of zero every `relu` and `abs` input sits on. Two
    /// evaluations with different patterns straddle a point where the
    /// recorded function is not differentiable.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) | Op::Abs(a) = node.op {
                out.extend(self.value(a).data().iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input (no gradient is propagated past it).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a store parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.bound.len() <= id.0 {
            self.bound.resize(id.0 + 1, None);
        }
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.bound[id.0] = Some(v);
        v
    }

    /// Records a value computed by code the tape cannot differentiate.
    /// Backpropagating through it fails with [`Error::UnsupportedOp`].
    pub fn opaque(&mut self, name: &str, value: Tensor, inputs: &[Var]) -> Var {
        self.push(value, Op::Opaque(name.to_string(), inputs.to_vec()))
    }

    fn check_same(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: {sa:?} @ {sb:?}")));
        }
        let value = self.value(a).matmul(self.value(b));
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    fn row_broadcast(&mut self, a: Var, row: Var, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let [r, c] = self.shape(a);
        if self.shape(row) != [1, c] {
            return Err(Error::Shape(format!(
                "row broadcast: {:?} against [{r}, {c}]",
                self.shape(row)
            )));
        }
        let rv = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for chunk in value.data_mut().chunks_mut(c.max(1)) {
            for (x, y) in chunk.iter_mut().zip(&rv) {
                *x = f(*x, *y);
            }
        }
        Ok(self.push(value, op))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, |x, y| x + y, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, |x, y| x * y, Op::MulRow(a, row))
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|x| scale * x + shift);
        self.push(value, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push(value, Op::Abs(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / x);
        self.push(value, Op::Recip(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0])[0];
        if parts.iter().any(|&p| self.shape(p)[0] != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor::from_vec(rows, cols, data), Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0])[1];
        if parts.iter().any(|&p| self.shape(p)[1] != cols) {
            return Err(Error::Shape("concat_rows: column counts differ".into()));
        }
        let rows: usize = parts.iter().map(|&p| self.shape(p)[0]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if start > end || end > cols {
            return Err(Error::Shape(format!("slice_cols {start}..{end} of {cols}")));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&src.row(r)[start..end]);
        }
        Ok(self.push(
            Tensor::from_vec(rows, end - start, data),
            Op::SliceCols(a, start, end),
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if start > end || end > rows {
            return Err(Error::Shape(format!("slice_rows {start}..{end} of {rows}")));
        }
        let data = self.value(a).data()[start * cols..end * cols].to_vec();
        Ok(self.push(
            Tensor::from_vec(end - start, cols, data),
            Op::SliceRows(a, start, end),
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    let va = self.value(*a);
                    let vb = self.value(*b);
                    let mut ga = Tensor::zeros(va.rows(), va.cols());
                    gemm(false, true, &g, vb, &mut ga, 0.0);
                    let mut gb = Tensor::zeros(vb.rows(), vb.cols());
                    gemm(true, false, va, &g, &mut gb, 0.0);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                    acc(&mut grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, column_sums(&g));
                    acc(&mut grads, *a, g.clone());
                }
                Op::MulRow(a, row) => {
                    let rv = self.value(*row);
                    let va = self.value(*a);
                    let c = rv.cols();
                    let mut ga = g.clone();
                    let mut grow = vec![0.0; c];
                    for r in 0..ga.rows() {
                        for j in 0..c {
                            let idx = r * c + j;
                            grow[j] += g.data()[idx] * va.data()[idx];
                            ga.data_mut()[idx] *= rv.data()[j];
                        }
                    }
                    acc(&mut grads, *row, Tensor::row_vector(grow));
                    acc(&mut grads, *a, ga);
                }
                Op::Affine(a, scale) => {
                    let k = *scale;
                    acc(&mut grads, *a, g.map(|x| k * x));
                }
                Op::Tanh(a) => {
                    acc(&mut grads, *a, g.zip_map(&node.value, |x, y| x * (1.0 - y * y)));
                }
                Op::Sigmoid(a) => {
                    acc(&mut grads, *a, g.zip_map(&node.value, |x, y| x * y * (1.0 - y)));
                }
                Op::Relu(a) => {
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 }),
                    );
                }
                Op::Abs(a) => {
                    // Subgradient 0 at the kink.
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(self.value(*a), |x, y| {
                            if y > 0.0 {
                                x
                            } else if y < 0.0 {
                                -x
                            } else {
                                0.0
                            }
                        }),
                    );
                }
                Op::Log(a) => {
                    acc(&mut grads, *a, g.zip_map(self.value(*a), |x, y| x / y));
                }
                Op::Recip(a) => {
                    acc(&mut grads, *a, g.zip_map(&node.value, |x, y| -x * y * y));
                }
                Op::Square(a) => {
                    acc(&mut grads, *a, g.zip_map(self.value(*a), |x, y| 2.0 * x * y));
                }
                Op::Sum(a) => {
                    let [r, c] = self.shape(*a);
                    acc(&mut grads, *a, Tensor::filled(r, c, g.item()));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let [r, c] = self.shape(p);
                        let mut data = Vec::with_capacity(r * c);
                        for row in 0..r {
                            data.extend_from_slice(&g.row(row)[offset..offset + c]);
                        }
                        acc(&mut grads, p, Tensor::from_vec(r, c, data));
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let [r, c] = self.shape(p);
                        let data = g.data()[offset * c..(offset + r) * c].to_vec();
                        acc(&mut grads, p, Tensor::from_vec(r, c, data));
                        offset += r;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let [r, c] = self.shape(*a);
                    let w = end - start;
                    let mut ga = Tensor::zeros(r, c);
                    for row in 0..r {
                        ga.data_mut()[row * c + start..row * c + end]
                            .copy_from_slice(&g.data()[row * w..(row + 1) * w]);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start, end) => {
                    let [r, c] = self.shape(*a);
                    let mut ga = Tensor::zeros(r, c);
                    ga.data_mut()[start * c..end * c].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::Opaque(name, inputs) => {
                    if !inputs.is_empty() {
                        return Err(Error::UnsupportedOp(name.clone()));
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let c = g.cols();
    let mut out = vec![0.0; c];
    for r in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    Tensor::row_vector(out)
}
