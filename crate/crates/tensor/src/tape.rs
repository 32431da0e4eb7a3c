//! Wengert-list reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Tape`] holding its output value
//! and enough saved state to run its adjoint. Nodes are only ever appended, so
//! the node list is already in topological order and [`Tape::backward`] is a
//! single reverse sweep.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{shape_err, Result, TensorError};
use crate::gemm::gemm;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Primitive operation kinds, exposed for introspection and op accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    AddRow,
    MulRow,
    MatMul,
    Permute,
    Reshape,
    ConcatLast,
    SliceLast,
    ConcatRows,
    SliceRows,
    Sigmoid,
    Tanh,
    Gelu,
    Softmax,
    LayerNorm,
    Sum,
    Mean,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MatMul {
        a: usize,
        b: usize,
        tb: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Permute { x: usize, axes: Vec<usize> },
    Reshape(usize),
    ConcatLast(Vec<usize>),
    SliceLast { x: usize, start: usize },
    ConcatRows(Vec<usize>),
    SliceRows { x: usize, offset: usize },
    Sigmoid(usize),
    Tanh(usize),
    Gelu(usize),
    Softmax(usize),
    LayerNorm { x: usize, rstd: Vec<f64> },
    Sum(usize),
    Mean(usize),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddRow(..) => OpKind::AddRow,
            Op::MulRow(..) => OpKind::MulRow,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Permute { .. } => OpKind::Permute,
            Op::Reshape(_) => OpKind::Reshape,
            Op::ConcatLast(_) => OpKind::ConcatLast,
            Op::SliceLast { .. } => OpKind::SliceLast,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Gelu(_) => OpKind::Gelu,
            Op::Softmax(_) => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of a computation, replayed backwards by [`Tape::backward`].
///
/// A tape supports exactly one backward pass; a second call returns
/// [`TensorError::TapeConsumed`].
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
    flops: u64,
    check_finite: bool,
    first_nonfinite: Option<String>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
            flops: 0,
            check_finite: cfg!(debug_assertions),
            first_nonfinite: None,
        }
    }

    /// Enables or disables the per-op scan for non-finite outputs.
    pub fn set_finite_check(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// Name of the first op whose output contained NaN or infinity, if the
    /// finite check was enabled when it ran.
    pub fn first_nonfinite(&self) -> Option<&str> {
        self.first_nonfinite.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scalar floating-point operations performed by forward ops so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Trainable input: gradients flow to it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant input: excluded from gradient propagation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).expect("variable from another tape").value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.node(v)?.value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn op_kind(&self, v: Var) -> Result<OpKind> {
        Ok(self.node(v)?.op.kind())
    }

    fn node(&self, v: Var) -> Result<&Node> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar {
                tape: self.id,
                index: v.index,
            });
        }
        Ok(&self.nodes[v.index])
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.check_finite && self.first_nonfinite.is_none() && !value.all_finite() {
            self.first_nonfinite = Some(format!("{:?}", op.kind()));
        }
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index].needs_grad)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (va, vb) = (&self.node(a)?.value, &self.node(b)?.value);
        if va.shape() != vb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.flops += out.numel() as u64;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, op(a.index, b.index), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let vx = &self.node(x)?.value;
        let out = Tensor::from_fn(vx.shape().to_vec(), |i| c * vx.data()[i]);
        self.flops += out.numel() as u64;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Scale(x.index, c), ng))
    }

    fn row_check(&self, name: &'static str, x: Var, r: Var) -> Result<usize> {
        let (vx, vr) = (&self.node(x)?.value, &self.node(r)?.value);
        let width = *vx.shape().last().unwrap_or(&1);
        if vr.rank() != 1 || vr.numel() != width || vx.rank() == 0 {
            return Err(shape_err(name, format!("{:?} with row {:?}", vx.shape(), vr.shape())));
        }
        Ok(width)
    }

    /// `x + r` with `r` broadcast along the last axis.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let width = self.row_check("add_row", x, r)?;
        let (vx, vr) = (&self.nodes[x.index].value, &self.nodes[r.index].value);
        let out = Tensor::from_fn(vx.shape().to_vec(), |i| vx.data()[i] + vr.data()[i % width]);
        self.flops += out.numel() as u64;
        let ng = self.needs(&[x, r]);
        Ok(self.push(out, Op::AddRow(x.index, r.index), ng))
    }

    /// `x ⊙ r` with `r` broadcast along the last axis.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let width = self.row_check("mul_row", x, r)?;
        let (vx, vr) = (&self.nodes[x.index].value, &self.nodes[r.index].value);
        let out = Tensor::from_fn(vx.shape().to_vec(), |i| vx.data()[i] * vr.data()[i % width]);
        self.flops += out.numel() as u64;
        let ng = self.needs(&[x, r]);
        Ok(self.push(out, Op::MulRow(x.index, r.index), ng))
    }

    fn matmul_impl(&mut self, a: Var, b: Var, tb: bool) -> Result<Var> {
        let name = if tb { "matmul_t" } else { "matmul" };
        let (va, vb) = (&self.node(a)?.value, &self.node(b)?.value);
        let (sa, sb) = (va.shape(), vb.shape());
        let bad = || shape_err(name, format!("{sa:?} x {sb:?}"));
        if sa.len() != sb.len() || !(sa.len() == 2 || sa.len() == 3) {
            return Err(bad());
        }
        let r = sa.len();
        let batch = if r == 3 { sa[0] } else { 1 };
        if r == 3 && sb[0] != batch {
            return Err(bad());
        }
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if tb {
            (sb[r - 1], sb[r - 2])
        } else {
            (sb[r - 2], sb[r - 1])
        };
        if k != kb {
            return Err(bad());
        }
        let mut data = vec![0.0; batch * m * n];
        for p in 0..batch {
            gemm(
                m,
                k,
                n,
                &va.data()[p * m * k..(p + 1) * m * k],
                false,
                &vb.data()[p * k * n..(p + 1) * k * n],
                tb,
                &mut data[p * m * n..(p + 1) * m * n],
                false,
            );
        }
        let shape = if r == 3 { vec![batch, m, n] } else { vec![m, n] };
        self.flops += 2 * (batch * m * k * n) as u64;
        let ng = self.needs(&[a, b]);
        let op = Op::MatMul {
            a: a.index,
            b: b.index,
            tb,
            batch,
            m,
            k,
            n,
        };
        Ok(self.push(Tensor::new(shape, data)?, op, ng))
    }

    /// Matrix product `a·b` of rank-2 operands, or batched over a leading axis
    /// for rank-3 operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a·bᵀ` (transposing the last two axes of `b`).
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let vx = &self.node(x)?.value;
        let rank = vx.rank();
        let mut seen = vec![false; rank];
        let valid = axes.len() == rank
            && axes.iter().all(|&a| a < rank && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(shape_err("permute", format!("{:?} by {axes:?}", vx.shape())));
        }
        let (shape, data) = permute_data(vx.data(), vx.shape(), axes);
        let ng = self.needs(&[x]);
        let op = Op::Permute {
            x: x.index,
            axes: axes.to_vec(),
        };
        Ok(self.push(Tensor::new(shape, data)?, op, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let vx = self.node(x)?.value.clone();
        let out = vx.reshaped(shape.to_vec())?;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Reshape(x.index), ng))
    }

    /// Concatenates along the last axis; leading shapes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.node(*parts.first().ok_or_else(|| shape_err("concat_last", "no inputs"))?)?;
        let lead = first.value.shape()[..first.value.rank().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = &self.node(p)?.value;
            if v.rank() == 0 || v.shape()[..v.rank() - 1] != lead[..] {
                return Err(shape_err("concat_last", format!("{lead:?} vs {:?}", v.shape())));
            }
            widths.push(*v.shape().last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[p.index].value.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ng = self.needs(parts);
        let op = Op::ConcatLast(parts.iter().map(|p| p.index).collect());
        Ok(self.push(Tensor::new(shape, data)?, op, ng))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let vx = &self.node(x)?.value;
        let width = *vx.shape().last().unwrap_or(&0);
        if start >= end || end > width {
            return Err(shape_err("slice_last", format!("{:?}[..., {start}..{end}]", vx.shape())));
        }
        let rows = vx.numel() / width;
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&vx.data()[r * width + start..r * width + end]);
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceLast { x: x.index, start }, ng))
    }

    /// Concatenates along the first axis; trailing shapes must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.node(*parts.first().ok_or_else(|| shape_err("concat_rows", "no inputs"))?)?;
        if first.value.rank() == 0 {
            return Err(shape_err("concat_rows", "scalar input"));
        }
        let tail = first.value.shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = &self.node(p)?.value;
            if v.rank() == 0 || v.shape()[1..] != tail[..] {
                return Err(shape_err("concat_rows", format!("{tail:?} vs {:?}", v.shape())));
            }
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let ng = self.needs(parts);
        let op = Op::ConcatRows(parts.iter().map(|p| p.index).collect());
        Ok(self.push(Tensor::new(shape, data)?, op, ng))
    }

    /// Entries `start..end` of the first axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let vx = &self.node(x)?.value;
        if vx.rank() == 0 || start >= end || end > vx.shape()[0] {
            return Err(shape_err("slice_rows", format!("{:?}[{start}..{end}]", vx.shape())));
        }
        let inner = vx.numel() / vx.shape()[0];
        let data = vx.data()[start * inner..end * inner].to_vec();
        let mut shape = vx.shape().to_vec();
        shape[0] = end - start;
        let ng = self.needs(&[x]);
        let op = Op::SliceRows {
            x: x.index,
            offset: start * inner,
        };
        Ok(self.push(Tensor::new(shape, data)?, op, ng))
    }

    fn unary(&mut self, x: Var, cost: u64, f: impl Fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Var> {
        let vx = &self.node(x)?.value;
        let out = Tensor::from_fn(vx.shape().to_vec(), |i| f(vx.data()[i]));
        self.flops += cost * out.numel() as u64;
        let ng = self.needs(&[x]);
        Ok(self.push(out, op(x.index), ng))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, 4, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, 4, f64::tanh, Op::Tanh)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, 8, gelu, Op::Gelu)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = &self.node(x)?.value;
        let width = *vx.shape().last().ok_or_else(|| shape_err("softmax", "scalar input"))?;
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(width) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        self.flops += 4 * out.numel() as u64;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Softmax(x.index), ng))
    }

    /// Normalizes each last-axis row to zero mean and unit variance
    /// (biased variance, ε = 1e-5). No affine parameters.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let vx = &self.node(x)?.value;
        let width = *vx.shape().last().ok_or_else(|| shape_err("layer_norm", "scalar input"))?;
        let mut data = vx.data().to_vec();
        let mut rstd = Vec::with_capacity(data.len() / width);
        for row in data.chunks_mut(width) {
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            rstd.push(r);
        }
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        self.flops += 6 * out.numel() as u64;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::LayerNorm { x: x.index, rstd }, ng))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let vx = &self.node(x)?.value;
        let out = Tensor::scalar(vx.data().iter().sum());
        self.flops += vx.numel() as u64;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Sum(x.index), ng))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let vx = &self.node(x)?.value;
        let out = Tensor::scalar(vx.data().iter().sum::<f64>() / vx.numel() as f64);
        self.flops += vx.numel() as u64;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Mean(x.index), ng))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let node = self.node(loss)?;
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if !node.value.is_scalar() {
            return Err(TensorError::NotScalar(node.value.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(vec![1.0]);
        for i in (0..=loss.index).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            if let Some(g) = &upper[0] {
                propagate(&self.nodes, i, g, lower);
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

/// Returns the gradient buffer for node `j`, creating it on first use, or
/// `None` when `j` does not need a gradient.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], j: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[j].needs_grad {
        return None;
    }
    Some(grads[j].get_or_insert_with(|| vec![0.0; nodes[j].value.numel()]))
}

fn propagate(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[i].value;
    let val = |j: usize| nodes[j].value.data();
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::Add(a, b) => {
            for j in [a, b] {
                if let Some(s) = slot(nodes, grads, j) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                }
            }
        }
        &Op::Sub(a, b) => {
            if let Some(s) = slot(nodes, grads, a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
            if let Some(s) = slot(nodes, grads, b) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s -= g);
            }
        }
        &Op::Mul(a, b) => {
            if let Some(s) = slot(nodes, grads, a) {
                for ((s, g), y) in s.iter_mut().zip(g).zip(val(b)) {
                    *s += g * y;
                }
            }
            if let Some(s) = slot(nodes, grads, b) {
                for ((s, g), x) in s.iter_mut().zip(g).zip(val(a)) {
                    *s += g * x;
                }
            }
        }
        &Op::Scale(x, c) => {
            if let Some(s) = slot(nodes, grads, x) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g);
            }
        }
        &Op::AddRow(x, r) => {
            if let Some(s) = slot(nodes, grads, x) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
            if let Some(s) = slot(nodes, grads, r) {
                let w = s.len();
                for (k, g) in g.iter().enumerate() {
                    s[k % w] += g;
                }
            }
        }
        &Op::MulRow(x, r) => {
            let w = nodes[r].value.numel();
            if let Some(s) = slot(nodes, grads, x) {
                let rv = val(r);
                for (k, (s, g)) in s.iter_mut().zip(g).enumerate() {
                    *s += g * rv[k % w];
                }
            }
            if let Some(s) = slot(nodes, grads, r) {
                for (k, (g, xv)) in g.iter().zip(val(x)).enumerate() {
                    s[k % w] += g * xv;
                }
            }
        }
        &Op::MatMul {
            a,
            b,
            tb,
            batch,
            m,
            k,
            n,
        } => {
            let (va, vb) = (val(a), val(b));
            if let Some(s) = slot(nodes, grads, a) {
                for p in 0..batch {
                    // dA = dC · op(B)ᵀ
                    gemm(
                        m,
                        n,
                        k,
                        &g[p * m * n..(p + 1) * m * n],
                        false,
                        &vb[p * k * n..(p + 1) * k * n],
                        !tb,
                        &mut s[p * m * k..(p + 1) * m * k],
                        true,
                    );
                }
            }
            if let Some(s) = slot(nodes, grads, b) {
                for p in 0..batch {
                    let gp = &g[p * m * n..(p + 1) * m * n];
                    let ap = &va[p * m * k..(p + 1) * m * k];
                    let sp = &mut s[p * k * n..(p + 1) * k * n];
                    if tb {
                        // B is n×k: dB = dCᵀ · A
                        gemm(n, m, k, gp, true, ap, false, sp, true);
                    } else {
                        // dB = Aᵀ · dC
                        gemm(k, m, n, ap, true, gp, false, sp, true);
                    }
                }
            }
        }
        Op::Permute { x, axes } => {
            if let Some(s) = slot(nodes, grads, *x) {
                let mut inverse = vec![0; axes.len()];
                for (d, &a) in axes.iter().enumerate() {
                    inverse[a] = d;
                }
                let (_, back) = permute_data(g, out.shape(), &inverse);
                s.iter_mut().zip(&back).for_each(|(s, g)| *s += g);
            }
        }
        &Op::Reshape(x) => {
            if let Some(s) = slot(nodes, grads, x) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
        }
        Op::ConcatLast(parts) => {
            let total = *out.shape().last().unwrap();
            let rows = out.numel() / total;
            let mut col = 0;
            for &p in parts {
                let w = *nodes[p].value.shape().last().unwrap();
                if let Some(s) = slot(nodes, grads, p) {
                    for r in 0..rows {
                        let src = &g[r * total + col..r * total + col + w];
                        s[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(s, g)| *s += g);
                    }
                }
                col += w;
            }
        }
        &Op::SliceLast { x, start } => {
            if let Some(s) = slot(nodes, grads, x) {
                let width = *nodes[x].value.shape().last().unwrap();
                let w = *out.shape().last().unwrap();
                for (r, chunk) in g.chunks(w).enumerate() {
                    let dst = &mut s[r * width + start..r * width + start + w];
                    dst.iter_mut().zip(chunk).for_each(|(s, g)| *s += g);
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.numel();
                if let Some(s) = slot(nodes, grads, p) {
                    s.iter_mut().zip(&g[offset..offset + len]).for_each(|(s, g)| *s += g);
                }
                offset += len;
            }
        }
        &Op::SliceRows { x, offset } => {
            if let Some(s) = slot(nodes, grads, x) {
                s[offset..offset + g.len()].iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
        }
        &Op::Sigmoid(x) => {
            if let Some(s) = slot(nodes, grads, x) {
                for ((s, g), y) in s.iter_mut().zip(g).zip(out.data()) {
                    *s += g * y * (1.0 - y);
                }
            }
        }
        &Op::Tanh(x) => {
            if let Some(s) = slot(nodes, grads, x) {
                for ((s, g), y) in s.iter_mut().zip(g).zip(out.data()) {
                    *s += g * (1.0 - y * y);
                }
            }
        }
        &Op::Gelu(x) => {
            if let Some(s) = slot(nodes, grads, x) {
                for ((s, g), xv) in s.iter_mut().zip(g).zip(val(x)) {
                    *s += g * gelu_grad(*xv);
                }
            }
        }
        &Op::Softmax(x) => {
            if let Some(s) = slot(nodes, grads, x) {
                let w = *out.shape().last().unwrap();
                for ((s, g), y) in s.chunks_mut(w).zip(g.chunks(w)).zip(out.data().chunks(w)) {
                    let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    for ((s, g), y) in s.iter_mut().zip(g).zip(y) {
                        *s += y * (g - dot);
                    }
                }
            }
        }
        Op::LayerNorm { x, rstd } => {
            if let Some(s) = slot(nodes, grads, *x) {
                let w = *out.shape().last().unwrap();
                let rows = s.chunks_mut(w).zip(g.chunks(w)).zip(out.data().chunks(w));
                for (((s, g), y), r) in rows.zip(rstd) {
                    let mean_g = g.iter().sum::<f64>() / w as f64;
                    let mean_gy = g.iter().zip(y).map(|(g, y)| g * y).sum::<f64>() / w as f64;
                    for ((s, g), y) in s.iter_mut().zip(g).zip(y) {
                        *s += r * (g - mean_g - y * mean_gy);
                    }
                }
            }
        }
        &Op::Sum(x) => {
            if let Some(s) = slot(nodes, grads, x) {
                s.iter_mut().for_each(|s| *s += g[0]);
            }
        }
        &Op::Mean(x) => {
            if let Some(s) = slot(nodes, grads, x) {
                let c = g[0] / s.len() as f64;
                s.iter_mut().for_each(|s| *s += c);
            }
        }
    }
}

/// Result of a backward pass: adjoints for every value that depends on a
/// parameter and feeds the loss.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if no path connects it to the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index)?.as_deref()
    }

    /// Gradient for `v` as a tensor; zeros when `v` is disconnected.
    pub fn tensor(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.index >= self.shapes.len() {
            return Err(TensorError::ForeignVar {
                tape: self.tape,
                index: v.index,
            });
        }
        let shape = self.shapes[v.index].clone();
        match &self.grads[v.index] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Ok(Tensor::zeros(shape)),
        }
    }
}
