//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Gradients are
//! produced by [`Graph::grad`], which emits the backward pass as *new graph
//! operations*. With `create_graph = true` those operations are themselves
//! differentiable, so gradients of gradient norms (the Lipschitz penalty on
//! the critic) are computed by calling `grad` twice.
//!
//! Graphs are single-use: build one per training step and drop it.

pub mod conv;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

pub use conv::ConvGeom;

use crate::tensor::{gemm, Tensor};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Pow(usize, f64),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Abs(usize),
    SumAll(usize),
    BroadcastScalar(usize),
    SumRows(usize),
    BroadcastRows(usize),
    ChannelSum(usize),
    BroadcastChannel(usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Reshape(usize),
    Narrow { x: usize, axis: usize, start: usize },
    PadNarrow { x: usize, axis: usize, start: usize },
    Concat { parts: Rc<Vec<usize>>, axis: usize },
    Gather { x: usize, index: Rc<Vec<usize>> },
    ScatterAdd { x: usize, index: Rc<Vec<usize>> },
    Frame { x: usize, hop: usize },
    OverlapAdd { x: usize, hop: usize },
    Conv { x: usize, w: usize, geom: Rc<ConvGeom> },
    ConvInputGrad { gy: usize, w: usize, geom: Rc<ConvGeom> },
    ConvWeightGrad { x: usize, gy: usize, geom: Rc<ConvGeom> },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Neg(a) | Scale(a, _) | AddScalar(a) | Pow(a, _) | Exp(a) | Log(a) | Tanh(a) | Sigmoid(a)
            | Relu(a) | LeakyRelu(a, _) | Abs(a) | SumAll(a) | BroadcastScalar(a) | SumRows(a)
            | BroadcastRows(a) | ChannelSum(a) | BroadcastChannel(a) | Reshape(a) => vec![*a],
            MatMul { a, b, .. } => vec![*a, *b],
            Narrow { x, .. } | PadNarrow { x, .. } | Gather { x, .. } | ScatterAdd { x, .. } => vec![*x],
            Frame { x, .. } | OverlapAdd { x, .. } => vec![*x],
            Concat { parts, .. } => parts.as_ref().clone(),
            Conv { x, w, .. } => vec![*x, *w],
            ConvInputGrad { gy, w, .. } => vec![*gy, *w],
            ConvWeightGrad { x, gy, .. } => vec![*x, *gy],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations on [`Var`]s for later differentiation.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: Cell<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Graph({} nodes)", self.nodes.borrow().len())
    }
}

/// A handle to one value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: Cell::new(true) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, false)
    }

    /// A differentiable input (parameter or probe point).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var<'_>) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.id].value)
    }

    pub fn requires_grad(&self, v: Var<'_>) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires = self.grad_enabled.get() && {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        self.push_raw(value, op, requires)
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { graph: self, id }
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'g>(&'g self, parts: &[Var<'g>], axis: usize) -> Var<'g> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let mut shape = values[0].shape().to_vec();
        let mut total = 0;
        for v in &values {
            assert_eq!(v.rank(), shape.len(), "concat rank mismatch");
            for (d, (&a, &b)) in v.shape().iter().zip(&shape).enumerate() {
                assert!(d == axis || a == b, "concat extent mismatch on axis {d}");
            }
            total += v.shape()[axis];
        }
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        self.push(
            Tensor::new(shape, out),
            Op::Concat { parts: Rc::new(parts.iter().map(|p| p.id).collect()), axis },
        )
    }

    /// Gradients of the scalar `y` with respect to each of `wrt`.
    ///
    /// `None` marks an input that `y` does not depend on. With
    /// `create_graph` the returned vars can be differentiated again.
    pub fn grad<'g>(&'g self, y: Var<'g>, wrt: &[Var<'g>], create_graph: bool) -> Vec<Option<Var<'g>>> {
        assert_eq!(y.value().len(), 1, "grad() needs a scalar output");
        let end = y.id + 1;

        // Only nodes lying on a path from some `wrt` entry to `y` need gradients.
        let mut relevant = vec![false; end];
        {
            let nodes = self.nodes.borrow();
            for v in wrt {
                if v.id < end {
                    relevant[v.id] = true;
                }
            }
            for i in 0..end {
                if !relevant[i] && nodes[i].requires_grad {
                    relevant[i] = nodes[i].op.inputs().iter().any(|&j| relevant[j]);
                }
            }
        }

        let previous = self.grad_enabled.replace(create_graph);
        let mut grads: Vec<Option<usize>> = vec![None; end];
        grads[y.id] = Some(self.constant(Tensor::full(y.value().shape().to_vec(), 1.0)).id);

        for i in (0..end).rev() {
            let Some(gid) = grads[i] else { continue };
            if !relevant[i] {
                continue;
            }
            let op = self.nodes.borrow()[i].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let contributions = self.vjp(&op, self.var(i), self.var(gid), &relevant);
            for (input, g) in contributions {
                grads[input] = Some(match grads[input] {
                    None => g.id,
                    Some(prev) => (self.var(prev) + g).id,
                });
            }
        }
        self.grad_enabled.set(previous);
        wrt.iter().map(|v| grads.get(v.id).copied().flatten().map(|id| self.var(id))).collect()
    }

    /// First-order gradients as plain tensors (zeros for unused inputs).
    pub fn gradients<'g>(&'g self, y: Var<'g>, wrt: &[Var<'g>]) -> Vec<Tensor> {
        self.grad(y, wrt, false)
            .into_iter()
            .zip(wrt)
            .map(|(g, v)| match g {
                Some(g) => g.value().as_ref().clone(),
                None => Tensor::zeros(v.value().shape().to_vec()),
            })
            .collect()
    }

    fn vjp<'g>(&'g self, op: &Op, out: Var<'g>, g: Var<'g>, relevant: &[bool]) -> Vec<(usize, Var<'g>)> {
        use Op::*;
        let mut res = Vec::new();
        let mut emit = |id: usize, f: &mut dyn FnMut() -> Var<'g>| {
            if relevant[id] {
                res.push((id, f()));
            }
        };
        let v = |id: usize| self.var(id);
        match *op {
            Leaf => {}
            Add(a, b) => {
                emit(a, &mut || g);
                emit(b, &mut || g);
            }
            Sub(a, b) => {
                emit(a, &mut || g);
                emit(b, &mut || -g);
            }
            Mul(a, b) => {
                emit(a, &mut || g * v(b));
                emit(b, &mut || g * v(a));
            }
            Neg(a) => emit(a, &mut || -g),
            Scale(a, c) => emit(a, &mut || g.scale(c)),
            AddScalar(a) => emit(a, &mut || g),
            Pow(a, p) => emit(a, &mut || g * v(a).powf(p - 1.0).scale(p)),
            Exp(a) => emit(a, &mut || g * out),
            Log(a) => emit(a, &mut || g * v(a).powf(-1.0)),
            Tanh(a) => emit(a, &mut || g * (out * out).scale(-1.0).add_scalar(1.0)),
            Sigmoid(a) => emit(a, &mut || g * out * out.scale(-1.0).add_scalar(1.0)),
            Relu(a) => emit(a, &mut || {
                let mask = v(a).value().map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                g * self.constant(mask)
            }),
            LeakyRelu(a, slope) => emit(a, &mut || {
                let mask = v(a).value().map(|x| if x > 0.0 { 1.0 } else { slope });
                g * self.constant(mask)
            }),
            Abs(a) => emit(a, &mut || {
                let sign = v(a).value().map(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 });
                g * self.constant(sign)
            }),
            SumAll(a) => emit(a, &mut || g.broadcast_scalar(v(a).shape())),
            BroadcastScalar(a) => emit(a, &mut || g.sum()),
            SumRows(a) => emit(a, &mut || g.broadcast_rows(v(a).shape())),
            BroadcastRows(a) => emit(a, &mut || g.sum_rows()),
            ChannelSum(a) => emit(a, &mut || g.broadcast_channel(v(a).shape())),
            BroadcastChannel(a) => emit(a, &mut || g.channel_sum()),
            MatMul { a, b, ta, tb } => {
                emit(a, &mut || if ta { v(b).matmul_t(g, tb, true) } else { g.matmul_t(v(b), false, !tb) });
                emit(b, &mut || if tb { g.matmul_t(v(a), true, ta) } else { v(a).matmul_t(g, !ta, false) });
            }
            Reshape(a) => emit(a, &mut || g.reshape(v(a).shape())),
            Narrow { x, axis, start } => {
                emit(x, &mut || g.pad_narrow(axis, start, v(x).shape()[axis]));
            }
            PadNarrow { x, axis, start } => {
                emit(x, &mut || g.narrow(axis, start, v(x).shape()[axis]));
            }
            Concat { ref parts, axis } => {
                let mut offset = 0;
                for &p in parts.iter() {
                    let len = v(p).shape()[axis];
                    emit(p, &mut || g.narrow(axis, offset, len));
                    offset += len;
                }
            }
            Gather { x, ref index } => {
                let len = *v(x).shape().last().unwrap();
                emit(x, &mut || g.scatter_add_last(Rc::clone(index), len));
            }
            ScatterAdd { x, ref index } => emit(x, &mut || g.gather_last_rc(Rc::clone(index))),
            Frame { x, hop } => {
                let len = v(x).shape()[1];
                emit(x, &mut || g.overlap_add(hop, len));
            }
            OverlapAdd { x, hop } => {
                let win = v(x).shape()[2];
                emit(x, &mut || g.frame(win, hop));
            }
            Conv { x, w, ref geom } => {
                emit(x, &mut || g.conv_input_grad_geom(v(w), Rc::clone(geom)));
                emit(w, &mut || v(x).conv_weight_grad_geom(g, Rc::clone(geom)));
            }
            ConvInputGrad { gy, w, ref geom } => {
                emit(gy, &mut || g.conv_geom(v(w), Rc::clone(geom)));
                emit(w, &mut || g.conv_weight_grad_geom(v(gy), Rc::clone(geom)));
            }
            ConvWeightGrad { x, gy, ref geom } => {
                emit(x, &mut || v(gy).conv_input_grad_geom(g, Rc::clone(geom)));
                emit(gy, &mut || v(x).conv_geom(g, Rc::clone(geom)));
            }
        }
        res
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(*self)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let value = self.value().map(f);
        self.graph.push(value, op)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn powf(self, p: f64) -> Var<'g> {
        self.unary(Op::Pow(self.id, p), |x| x.powf(p))
    }

    pub fn sqrt(self) -> Var<'g> {
        self.powf(0.5)
    }

    pub fn square(self) -> Var<'g> {
        self * self
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'g> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(Op::Sigmoid(self.id), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g> {
        self.unary(Op::LeakyRelu(self.id, slope), move |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn abs(self) -> Var<'g> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(self) -> Var<'g> {
        let s = self.value().sum();
        self.graph.push(Tensor::scalar(s), Op::SumAll(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Expands a one-element tensor to `shape`.
    pub fn broadcast_scalar(self, shape: Vec<usize>) -> Var<'g> {
        let s = self.item();
        self.graph.push(Tensor::full(shape, s), Op::BroadcastScalar(self.id))
    }

    /// `[B, ...] -> [B]`, summing everything but the leading axis.
    pub fn sum_rows(self) -> Var<'g> {
        let x = self.value();
        let b = x.shape()[0];
        let inner = x.len() / b.max(1);
        let out = (0..b).map(|r| x.data()[r * inner..(r + 1) * inner].iter().sum()).collect();
        self.graph.push(Tensor::new([b], out), Op::SumRows(self.id))
    }

    /// `[B] -> shape` with `shape[0] == B`, repeating each entry over its row.
    pub fn broadcast_rows(self, shape: Vec<usize>) -> Var<'g> {
        let x = self.value();
        assert_eq!(x.shape(), &[shape[0]], "broadcast_rows needs a [B] vector");
        let inner: usize = shape[1..].iter().product();
        let mut out = Vec::with_capacity(shape[0] * inner);
        for &v in x.data() {
            out.extend(std::iter::repeat(v).take(inner));
        }
        self.graph.push(Tensor::new(shape, out), Op::BroadcastRows(self.id))
    }

    /// `[N, C, ...] -> [C]`, summing over batch and all trailing axes.
    pub fn channel_sum(self) -> Var<'g> {
        let x = self.value();
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let inner: usize = x.shape()[2..].iter().product();
        let mut out = vec![0.0; c];
        for s in 0..n {
            for (ch, acc) in out.iter_mut().enumerate() {
                let base = (s * c + ch) * inner;
                *acc += x.data()[base..base + inner].iter().sum::<f64>();
            }
        }
        self.graph.push(Tensor::new([c], out), Op::ChannelSum(self.id))
    }

    /// `[C] -> [N, C, ...]`, the adjoint of [`Var::channel_sum`].
    pub fn broadcast_channel(self, shape: Vec<usize>) -> Var<'g> {
        let x = self.value();
        let (n, c) = (shape[0], shape[1]);
        assert_eq!(x.shape(), &[c], "broadcast_channel needs a [C] vector");
        let inner: usize = shape[2..].iter().product();
        let mut out = Vec::with_capacity(n * c * inner);
        for _ in 0..n {
            for &v in x.data() {
                out.extend(std::iter::repeat(v).take(inner));
            }
        }
        self.graph.push(Tensor::new(shape, out), Op::BroadcastChannel(self.id))
    }

    /// Adds a per-channel vector to an `[N, C, ...]` tensor.
    pub fn add_channel(self, bias: Var<'g>) -> Var<'g> {
        self + bias.broadcast_channel(self.shape())
    }

    /// Multiplies an `[N, C, ...]` tensor by a per-channel vector.
    pub fn mul_channel(self, scale: Var<'g>) -> Var<'g> {
        self * scale.broadcast_channel(self.shape())
    }

    pub fn matmul(self, rhs: Var<'g>) -> Var<'g> {
        self.matmul_t(rhs, false, false)
    }

    /// `op(self) * op(rhs)` for 2-D operands, `op` transposing when the flag is set.
    pub fn matmul_t(self, rhs: Var<'g>, ta: bool, tb: bool) -> Var<'g> {
        let a = self.value();
        let b = rhs.value();
        assert!(a.rank() == 2 && b.rank() == 2, "matmul needs 2-D operands");
        let (m, k) = if ta { (a.shape()[1], a.shape()[0]) } else { (a.shape()[0], a.shape()[1]) };
        let (k2, n) = if tb { (b.shape()[1], b.shape()[0]) } else { (b.shape()[0], b.shape()[1]) };
        assert_eq!(k, k2, "matmul inner dimension mismatch: {:?} x {:?}", a.shape(), b.shape());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), ta, b.data(), tb, &mut out, false);
        self.graph.push(Tensor::new([m, n], out), Op::MatMul { a: self.id, b: rhs.id, ta, tb })
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Var<'g> {
        let value = self.value().as_ref().clone().reshape(shape);
        self.graph.push(value, Op::Reshape(self.id))
    }

    /// Entries `start..start + len` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g> {
        let x = self.value();
        let (outer, full, inner) = split_axis(x.shape(), axis);
        assert!(start + len <= full, "narrow {start}+{len} out of range {full}");
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        self.graph.push(Tensor::new(shape, out), Op::Narrow { x: self.id, axis, start })
    }

    /// Embeds `self` at `start` along `axis` in a zero tensor of extent `full`.
    pub fn pad_narrow(self, axis: usize, start: usize, full: usize) -> Var<'g> {
        let x = self.value();
        let (outer, len, inner) = split_axis(x.shape(), axis);
        assert!(start + len <= full, "pad_narrow {start}+{len} out of range {full}");
        let mut out = vec![0.0; outer * full * inner];
        for o in 0..outer {
            let dst = (o * full + start) * inner;
            out[dst..dst + len * inner].copy_from_slice(&x.data()[o * len * inner..(o + 1) * len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = full;
        self.graph.push(Tensor::new(shape, out), Op::PadNarrow { x: self.id, axis, start })
    }

    /// Selects `index` entries along the last axis.
    pub fn gather_last(self, index: Vec<usize>) -> Var<'g> {
        self.gather_last_rc(Rc::new(index))
    }

    fn gather_last_rc(self, index: Rc<Vec<usize>>) -> Var<'g> {
        let x = self.value();
        let len = *x.shape().last().expect("gather on rank-0 tensor");
        let rows = x.len() / len.max(1);
        let mut out = Vec::with_capacity(rows * index.len());
        for r in 0..rows {
            let row = &x.data()[r * len..(r + 1) * len];
            out.extend(index.iter().map(|&i| row[i]));
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = index.len();
        self.graph.push(Tensor::new(shape, out), Op::Gather { x: self.id, index })
    }

    /// Adjoint of [`Var::gather_last`]: accumulates entries into a last axis of `len`.
    pub fn scatter_add_last(self, index: Rc<Vec<usize>>, len: usize) -> Var<'g> {
        let x = self.value();
        let m = index.len();
        let rows = x.len() / m.max(1);
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            for (j, &i) in index.iter().enumerate() {
                out[r * len + i] += x.data()[r * m + j];
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.graph.push(Tensor::new(shape, out), Op::ScatterAdd { x: self.id, index })
    }

    /// `[B, L] -> [B, F, win]` with `F = (L - win) / hop + 1`.
    pub fn frame(self, win: usize, hop: usize) -> Var<'g> {
        let x = self.value();
        assert_eq!(x.rank(), 2, "frame needs [B, L]");
        let (b, len) = (x.shape()[0], x.shape()[1]);
        assert!(len >= win && hop >= 1, "cannot frame {len} samples with window {win}");
        let frames = (len - win) / hop + 1;
        let mut out = Vec::with_capacity(b * frames * win);
        for r in 0..b {
            let row = &x.data()[r * len..(r + 1) * len];
            for f in 0..frames {
                out.extend_from_slice(&row[f * hop..f * hop + win]);
            }
        }
        self.graph.push(Tensor::new([b, frames, win], out), Op::Frame { x: self.id, hop })
    }

    /// Adjoint of [`Var::frame`]: `[B, F, win] -> [B, len]` by overlap-add.
    pub fn overlap_add(self, hop: usize, len: usize) -> Var<'g> {
        let x = self.value();
        let (b, frames, win) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut out = vec![0.0; b * len];
        for r in 0..b {
            for f in 0..frames {
                let src = &x.data()[(r * frames + f) * win..(r * frames + f + 1) * win];
                for (k, &s) in src.iter().enumerate() {
                    out[r * len + f * hop + k] += s;
                }
            }
        }
        self.graph.push(Tensor::new([b, len], out), Op::OverlapAdd { x: self.id, hop })
    }

    /// Convolution of an `[N, Cin, spatial...]` input with `[Cout, Cin, kernel...]` weights.
    pub fn conv(self, w: Var<'g>, geom: &ConvGeom) -> Var<'g> {
        self.conv_geom(w, Rc::new(geom.clone()))
    }

    fn conv_geom(self, w: Var<'g>, geom: Rc<ConvGeom>) -> Var<'g> {
        let y = conv::conv_forward(&self.value(), &w.value(), &geom);
        self.graph.push(y, Op::Conv { x: self.id, w: w.id, geom })
    }

    /// Transposed convolution: maps a `geom`-output-shaped tensor back to
    /// `geom`-input shape using `[Cout, Cin, kernel...]` weights.
    pub fn conv_transpose(self, w: Var<'g>, geom: &ConvGeom) -> Var<'g> {
        self.conv_input_grad_geom(w, Rc::new(geom.clone()))
    }

    fn conv_input_grad_geom(self, w: Var<'g>, geom: Rc<ConvGeom>) -> Var<'g> {
        let y = conv::conv_input_grad(&self.value(), &w.value(), &geom);
        self.graph.push(y, Op::ConvInputGrad { gy: self.id, w: w.id, geom })
    }

    fn conv_weight_grad_geom(self, gy: Var<'g>, geom: Rc<ConvGeom>) -> Var<'g> {
        let y = conv::conv_weight_grad(&self.value(), &gy.value(), &geom);
        self.graph.push(y, Op::ConvWeightGrad { x: self.id, gy: gy.id, geom })
    }
}

macro_rules! binary_op {
    ($trait:ident, $method:ident, $variant:ident, $f:expr) => {
        impl<'g> std::ops::$trait for Var<'g> {
            type Output = Var<'g>;
            fn $method(self, rhs: Var<'g>) -> Var<'g> {
                assert!(std::ptr::eq(self.graph, rhs.graph), "vars from different graphs");
                let value = self.value().zip_map(&rhs.value(), $f);
                self.graph.push(value, Op::$variant(self.id, rhs.id))
            }
        }
    };
}

binary_op!(Add, add, Add, |a, b| a + b);
binary_op!(Sub, sub, Sub, |a, b| a - b);
binary_op!(Mul, mul, Mul, |a, b| a * b);

impl<'g> std::ops::Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        self.unary(Op::Neg(self.id), |x| -x)
    }
}
