//! Reverse-mode tape over [`Tensor`] values.
//!
//! Every operation appends a node whose inputs already exist on the tape, so
//! node order is a topological order and the backward pass is a single
//! reverse sweep. Shapes are explicit: elementwise ops require identical
//! shapes, except that either operand may be a scalar.

use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adjoint of an operation defined outside this module.
///
/// `backward` receives the forward inputs, the forward output and the
/// incoming gradient, and returns one gradient per input. Entries whose
/// `needs` flag is false may be `None`.
pub trait Adjoint {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Exp,
    Log,
    Softplus,
    Sigmoid,
    Relu,
    Tanh,
    Sin,
    Cos,
    Square,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Softplus => "softplus",
            Unary::Sigmoid => "sigmoid",
            Unary::Relu => "relu",
            Unary::Tanh => "tanh",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Square => "square",
        }
    }

    fn forward(self, x: f64) -> f64 {
        match self {
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::Tanh => x.tanh(),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Square => x * x,
        }
    }

    /// d(out)/d(in) from the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Square => 2.0 * x,
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    Matmul(Var, Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Unary(Var, Unary),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Mean(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    GatherRows {
        x: Var,
        index: Rc<[Option<usize>]>,
    },
    Reshape(Var),
    Custom {
        inputs: Vec<Var>,
        adjoint: Box<dyn Adjoint>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::AddRow(..) => "add_row",
            Op::Matmul(..) => "matmul",
            Op::Concat { .. } => "concat",
            Op::Unary(_, u) => u.name(),
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax { .. } => "softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Slice { .. } => "slice",
            Op::GatherRows { .. } => "gather_rows",
            Op::Reshape(..) => "reshape",
            Op::Custom { adjoint, .. } => adjoint.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::Matmul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Unary(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a) => vec![*a],
            Op::Softmax { x, .. } | Op::Slice { x, .. } | Op::GatherRows { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat { inputs, .. } | Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of tensor operations supporting one reverse pass per output.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    fault: Option<&'static str>,
}

const LN_EPS: f64 = 1e-5;

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

    /// Scale the adjoint of every op named `op` by 1.5 during backward.
    ///
    /// Used to check that the gradient harness actually detects bad adjoints.
    #[doc(hidden)]
    pub fn inject_adjoint_fault(&mut self, op: &'static str) {
        self.fault = Some(op);
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward output with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op) -> Var {
        let rg = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Append an operation whose adjoint is supplied by the caller.
    pub fn custom(&mut self, inputs: Vec<Var>, value: Tensor, adjoint: Box<dyn Adjoint>) -> Var {
        self.push_op(value, Op::Custom { inputs, adjoint })
    }

    // ---- elementwise -------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Ok(Tensor::raw(ta.shape().to_vec(), data))
        } else if tb.rank() == 0 {
            let y = tb.item();
            Ok(ta.map(|x| f(x, y)))
        } else if ta.rank() == 0 {
            let x = ta.item();
            Ok(tb.map(|y| f(x, y)))
        } else {
            Err(Error::shape(name, ta.shape(), tb.shape()))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push_op(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push_op(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push_op(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push_op(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push_op(v, Op::AddScalar(a))
    }

    /// `x[.., j] + b[j]` where `b` is a vector matching the last extent of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let m = *tx.shape().last().unwrap_or(&1);
        if tb.rank() != 1 || tb.len() != m || tx.rank() == 0 {
            return Err(Error::shape("add_row", tx.shape(), tb.shape()));
        }
        let bd = tb.data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % m])
            .collect();
        let value = Tensor::raw(tx.shape().to_vec(), data);
        Ok(self.push_op(value, Op::AddRow(x, b)))
    }

    fn unary(&mut self, a: Var, u: Unary) -> Var {
        let v = self.value(a).map(|x| u.forward(x));
        self.push_op(v, Op::Unary(a, u))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Cos)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    // ---- linear algebra ----------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let value = Tensor::raw(vec![m, n], out);
        Ok(self.push_op(value, Op::Matmul(a, b)))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let tx = self.value(x);
        let m = *tx.shape().last().unwrap_or(&1);
        for p in [gamma, beta] {
            let tp = self.value(p);
            if tp.rank() != 1 || tp.len() != m || tx.rank() == 0 {
                return Err(Error::shape("layer_norm", tx.shape(), tp.shape()));
            }
        }
        let rows = tx.len() / m;
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0; tx.len()];
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        for (row, o) in tx.data().chunks(m).zip(out.chunks_mut(m)) {
            let mu = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..m {
                o[j] = (row[j] - mu) * r * g[j] + b[j];
            }
            mean.push(mu);
            rstd.push(r);
        }
        let value = Tensor::raw(tx.shape().to_vec(), out);
        Ok(self.push_op(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
        ))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(Error::invalid(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", tx.shape()),
            ));
        }
        let (outer, len, inner) = split_axis(tx.shape(), axis);
        let mut out = vec![0.0; tx.len()];
        let d = tx.data();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let mx = (0..len).map(|k| d[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..len {
                    let e = (d[at(k)] - mx).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    out[at(k)] /= z;
                }
            }
        }
        let value = Tensor::raw(tx.shape().to_vec(), out);
        Ok(self.push_op(value, Op::Softmax { x, axis }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_op(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push_op(Tensor::scalar(s), Op::Mean(x))
    }

    // ---- structure -----------------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(
                "concat",
                format!("axis {axis} out of range for shape {base:?}"),
            ));
        }
        let mut extent = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", &base, s));
            }
            extent += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let mut shape = base.clone();
        shape[axis] = extent;
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.len() / outer;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::raw(shape, out);
        Ok(self.push_op(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Contiguous range `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || len == 0 || start + len > t.shape()[axis] {
            return Err(Error::invalid(
                "slice",
                format!(
                    "range {start}..{} on axis {axis} out of bounds for shape {:?}",
                    start + len,
                    t.shape()
                ),
            ));
        }
        let (outer, ext, inner) = split_axis(t.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            out.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::raw(shape, out);
        Ok(self.push_op(value, Op::Slice { x, axis, start }))
    }

    /// Select rows of `x` (leading axis); `None` yields a row of zeros.
    pub fn gather_rows(&mut self, x: Var, index: Rc<[Option<usize>]>) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.rows_cols();
        if t.rank() == 0 || index.is_empty() {
            return Err(Error::invalid("gather_rows", "need a non-empty index over a tensor of rank >= 1"));
        }
        let mut out = vec![0.0; index.len() * cols];
        for (dst, src) in out.chunks_mut(cols).zip(index.iter()) {
            if let Some(r) = *src {
                if r >= rows {
                    return Err(Error::invalid(
                        "gather_rows",
                        format!("row {r} out of range for {rows} rows"),
                    ));
                }
                dst.copy_from_slice(&t.data()[r * cols..(r + 1) * cols]);
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] = index.len();
        let value = Tensor::raw(shape, out);
        Ok(self.push_op(value, Op::GatherRows { x, index }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push_op(value, Op::Reshape(x)))
    }

    // ---- backward ------------------------------------------------------

    /// Accumulate d(out)/d(leaf) into every leaf that requires a gradient.
    ///
    /// Gradients of a previous backward pass are discarded.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        let shape = self.value(out).shape();
        if self.value(out).len() != 1 {
            return Err(Error::NonScalar {
                op: "backward",
                shape: crate::error::Dims(shape.to_vec()),
            });
        }
        let n = out.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::full(shape, 1.0));
        for idx in (0..n).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let inputs = self.nodes[idx].op.inputs();
            let needs: Vec<bool> = inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let mut local = self.adjoint(idx, &g, &needs);
            if self.fault == Some(self.nodes[idx].op.name()) {
                for t in local.iter_mut().flatten() {
                    for v in t.data_mut() {
                        *v *= 1.5;
                    }
                }
            }
            for ((v, need), lg) in inputs.iter().zip(&needs).zip(local) {
                if !*need {
                    continue;
                }
                if let Some(lg) = lg {
                    accumulate(&mut grads[v.0], lg);
                }
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                grads[i] = None;
            } else if grads[i].is_none() && i <= out.0 {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn adjoint(&self, idx: usize, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let node = &self.nodes[idx];
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![
                Some(reduce_to(g, val(a), |x| x)),
                Some(reduce_to(g, val(b), |x| x)),
            ],
            Op::Sub(a, b) => vec![
                Some(reduce_to(g, val(a), |x| x)),
                Some(reduce_to(g, val(b), |x| -x)),
            ],
            Op::Mul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let ga = needs[0].then(|| {
                    let prod = elementwise_with(g, tb);
                    reduce_to(&prod, ta, |x| x)
                });
                let gb = needs[1].then(|| {
                    let prod = elementwise_with(g, ta);
                    reduce_to(&prod, tb, |x| x)
                });
                vec![ga, gb]
            }
            Op::Scale(_, k) => vec![Some(g.map(|x| x * k))],
            Op::AddScalar(_) => vec![Some(g.clone())],
            Op::AddRow(_, b) => {
                let m = val(b).len();
                let mut gb = vec![0.0; m];
                for (i, &v) in g.data().iter().enumerate() {
                    gb[i % m] += v;
                }
                vec![Some(g.clone()), Some(Tensor::raw(vec![m], gb))]
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let ga = needs[0].then(|| {
                    let mut out = vec![0.0; m * k];
                    // g [m,n] x b^T [n,k]
                    gemm(m, n, k, g.data(), false, tb.data(), true, &mut out, 0.0);
                    Tensor::raw(vec![m, k], out)
                });
                let gb = needs[1].then(|| {
                    let mut out = vec![0.0; k * n];
                    // a^T [k,m] x g [m,n]
                    gemm(k, m, n, ta.data(), true, g.data(), false, &mut out, 0.0);
                    Tensor::raw(vec![k, n], out)
                });
                vec![ga, gb]
            }
            Op::Concat { inputs, axis } => {
                let outer: usize = g.shape()[..*axis].iter().product();
                let mut parts: Vec<Vec<f64>> = inputs.iter().map(|v| Vec::with_capacity(val(v).len())).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (p, v) in parts.iter_mut().zip(inputs) {
                        let chunk = val(v).len() / outer;
                        p.extend_from_slice(&g.data()[off..off + chunk]);
                        off += chunk;
                    }
                }
                parts
                    .into_iter()
                    .zip(inputs)
                    .map(|(p, v)| Some(Tensor::raw(val(v).shape().to_vec(), p)))
                    .collect()
            }
            Op::Unary(a, u) => {
                let x = val(a).data();
                let y = node.value.data();
                let data = g
                    .data()
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&gv, (&xv, &yv))| gv * u.derivative(xv, yv))
                    .collect();
                vec![Some(Tensor::raw(val(a).shape().to_vec(), data))]
            }
            Op::LayerNorm {
                x,
                gamma,
                mean,
                rstd,
                ..
            } => {
                let tx = val(x);
                let gm = val(gamma).data();
                let m = gm.len();
                let mut gx = vec![0.0; tx.len()];
                let mut ggamma = vec![0.0; m];
                let mut gbeta = vec![0.0; m];
                for (r, ((row, grow), gxr)) in tx
                    .data()
                    .chunks(m)
                    .zip(g.data().chunks(m))
                    .zip(gx.chunks_mut(m))
                    .enumerate()
                {
                    let (mu, rs) = (mean[r], rstd[r]);
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..m {
                        let xhat = (row[j] - mu) * rs;
                        let d = grow[j] * gm[j];
                        ggamma[j] += grow[j] * xhat;
                        gbeta[j] += grow[j];
                        sum_d += d;
                        sum_dx += d * xhat;
                    }
                    for j in 0..m {
                        let xhat = (row[j] - mu) * rs;
                        let d = grow[j] * gm[j];
                        gxr[j] = rs * (d - sum_d / m as f64 - xhat * sum_dx / m as f64);
                    }
                }
                vec![
                    Some(Tensor::raw(tx.shape().to_vec(), gx)),
                    Some(Tensor::raw(vec![m], ggamma)),
                    Some(Tensor::raw(vec![m], gbeta)),
                ]
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let mut gx = vec![0.0; y.len()];
                let gd = g.data();
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| gd[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            gx[at(k)] = y[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::raw(val(x).shape().to_vec(), gx))]
            }
            Op::Sum(x) => vec![Some(Tensor::full(val(x).shape(), g.item()))],
            Op::Mean(x) => {
                let n = val(x).len() as f64;
                vec![Some(Tensor::full(val(x).shape(), g.item() / n))]
            }
            Op::Slice { x, axis, start } => {
                let tx = val(x);
                let (outer, ext, inner) = split_axis(tx.shape(), *axis);
                let len = g.shape()[*axis];
                let mut gx = vec![0.0; tx.len()];
                for o in 0..outer {
                    let base = (o * ext + start) * inner;
                    let src = o * len * inner;
                    gx[base..base + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                vec![Some(Tensor::raw(tx.shape().to_vec(), gx))]
            }
            Op::GatherRows { x, index } => {
                let tx = val(x);
                let (_, cols) = tx.rows_cols();
                let mut gx = vec![0.0; tx.len()];
                for (src, dst) in g.data().chunks(cols).zip(index.iter()) {
                    if let Some(r) = *dst {
                        for (a, b) in gx[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                }
                vec![Some(Tensor::raw(tx.shape().to_vec(), gx))]
            }
            Op::Reshape(x) => vec![Some(Tensor::raw(val(x).shape().to_vec(), g.data().to_vec()))],
            Op::Custom { inputs, adjoint } => {
                let ins: Vec<&Tensor> = inputs.iter().map(val).collect();
                adjoint.backward(&ins, &node.value, g, needs)
            }
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

/// Elementwise product of `g` with `other`, where `other` may be a scalar.
fn elementwise_with(g: &Tensor, other: &Tensor) -> Tensor {
    if other.rank() == 0 && g.rank() != 0 {
        let k = other.item();
        g.map(|x| x * k)
    } else if g.rank() == 0 && other.rank() != 0 {
        let k = g.item();
        other.map(|x| x * k)
    } else {
        let data = g.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        Tensor::raw(g.shape().to_vec(), data)
    }
}

/// Sum `g` down to the shape of `target` (identity unless `target` is a scalar
/// broadcast against a tensor), applying `f` to each value.
fn reduce_to(g: &Tensor, target: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    if target.rank() == 0 && g.len() != 1 {
        Tensor::scalar(g.data().iter().map(|&x| f(x)).sum())
    } else {
        Tensor::raw(target.shape().to_vec(), g.data().iter().map(|&x| f(x)).collect())
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `c = a' b' + beta c` where `a'` is `[m, k]` and `b'` is `[k, n]`, each
/// optionally read as the transpose of its row-major storage.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index touched by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
