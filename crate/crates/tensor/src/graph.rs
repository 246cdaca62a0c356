//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Nodes are
//! appended in evaluation order, so the tape is already topologically sorted
//! and [`Graph::backward`] is a single reverse sweep.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::kernels::{self, NormCache, Window};
use crate::tensor::{ensure_same_shape, Tensor};

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Broadcast(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MulScalarVar { x: usize, s: usize },
    Relu(usize),
    LeakyRelu(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Abs(usize),
    Ln(usize),
    Clamp(usize, f64, f64),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: Window,
    },
    ConvTranspose2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: Window,
    },
    InstanceNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        cache: NormCache,
    },
    ConcatChannels(Vec<usize>),
    ChannelMax { x: usize, argmax: Vec<usize> },
    ChannelMean(usize),
    MaxPool2 { x: usize, argmax: Vec<usize> },
    AvgPool2(usize),
    Gram(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// The recording tape.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// A handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    id: usize,
    graph: &'g Graph,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by variable.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: &Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: &Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn concat_channels<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts.first().ok_or(TensorError::Empty("concat_channels"))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| self.same(p).value()).collect();
        let (n, _, h, w) = values[0].dims4()?;
        let mut c_total = 0;
        for v in &values {
            let (vn, vc, vh, vw) = v.dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_channels",
                    lhs: values[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            c_total += vc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * c_total * plane);
        for b in 0..n {
            for v in &values {
                let vc = v.shape()[1];
                out.extend_from_slice(&v.data()[b * vc * plane..(b + 1) * vc * plane]);
            }
        }
        let rg = parts.iter().any(|p| self.requires_grad(p.id));
        let _ = first;
        Ok(self.push(
            Tensor::new([n, c_total, h, w], out)?,
            Op::ConcatChannels(parts.iter().map(|p| p.id).collect()),
            rg,
        ))
    }

    fn same<'g>(&'g self, v: &Var<'g>) -> Var<'g> {
        assert!(
            std::ptr::eq(self, v.graph),
            "variable belongs to a different graph"
        );
        *v
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            id: nodes.len() - 1,
            graph: self,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Back-propagates from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let loss = self.same(&loss);
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(root.value.shape().to_vec()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            backprop_node(&nodes, node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        for (id, node) in nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, delta: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn with_shape(data: Vec<f64>, like: &Tensor) -> Tensor {
    Tensor::new(like.shape().to_vec(), data).expect("gradient shape")
}

fn backprop_node(
    nodes: &[Node],
    node: &Node,
    g: &Tensor,
    grads: &mut [Option<Tensor>],
) -> Result<()> {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    let rg = |id: usize| nodes[id].requires_grad;
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                accumulate(grads, nodes, *a, g.zip_map(val(*b), |gv, bv| gv * bv)?);
            }
            if rg(*b) {
                accumulate(grads, nodes, *b, g.zip_map(val(*a), |gv, av| gv * av)?);
            }
        }
        Op::Broadcast(src) => {
            let reduced = reduce_to_shape(g, val(*src).shape());
            accumulate(grads, nodes, *src, reduced);
        }
        Op::Scale(x, k) => accumulate(grads, nodes, *x, g.map(|v| v * k)),
        Op::AddScalar(x) => accumulate(grads, nodes, *x, g.clone()),
        Op::MulScalarVar { x, s } => {
            let sv = val(*s).data()[0];
            if rg(*x) {
                accumulate(grads, nodes, *x, g.map(|v| v * sv));
            }
            if rg(*s) {
                let ds: f64 = g.data().iter().zip(val(*x).data()).map(|(a, b)| a * b).sum();
                accumulate(grads, nodes, *s, Tensor::scalar(ds).reshape(val(*s).shape().to_vec())?);
            }
        }
        Op::Relu(x) => {
            accumulate(grads, nodes, *x, g.zip_map(y, |gv, yv| if yv > 0.0 { gv } else { 0.0 })?)
        }
        Op::LeakyRelu(x, slope) => accumulate(
            grads,
            nodes,
            *x,
            g.zip_map(val(*x), |gv, xv| if xv > 0.0 { gv } else { gv * slope })?,
        ),
        Op::Tanh(x) => accumulate(grads, nodes, *x, g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv))?),
        Op::Sigmoid(x) => {
            accumulate(grads, nodes, *x, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv))?)
        }
        Op::Abs(x) => accumulate(
            grads,
            nodes,
            *x,
            g.zip_map(val(*x), |gv, xv| {
                if xv > 0.0 {
                    gv
                } else if xv < 0.0 {
                    -gv
                } else {
                    0.0
                }
            })?,
        ),
        Op::Ln(x) => accumulate(grads, nodes, *x, g.zip_map(val(*x), |gv, xv| gv / xv)?),
        Op::Clamp(x, lo, hi) => accumulate(
            grads,
            nodes,
            *x,
            g.zip_map(val(*x), |gv, xv| if xv >= *lo && xv <= *hi { gv } else { 0.0 })?,
        ),
        Op::Square(x) => accumulate(grads, nodes, *x, g.zip_map(val(*x), |gv, xv| 2.0 * gv * xv)?),
        Op::Sum(x) => {
            let gv = g.data()[0];
            accumulate(grads, nodes, *x, Tensor::full(val(*x).shape().to_vec(), gv));
        }
        Op::Mean(x) => {
            let xv = val(*x);
            let gv = g.data()[0] / xv.numel().max(1) as f64;
            accumulate(grads, nodes, *x, Tensor::full(xv.shape().to_vec(), gv));
        }
        Op::Reshape(x) => {
            accumulate(grads, nodes, *x, g.clone().reshape(val(*x).shape().to_vec())?);
        }
        Op::Conv2d { x, w, b, geom } => {
            let xv = val(*x);
            let wv = val(*w);
            let n = xv.shape()[0];
            let cout = wv.shape()[0];
            let cg = kernels::conv2d_backward(
                xv.data(),
                n,
                wv.data(),
                cout,
                geom,
                g.data(),
                rg(*x),
                rg(*w),
                b.is_some_and(rg),
            );
            if let Some(dx) = cg.dx {
                accumulate(grads, nodes, *x, with_shape(dx, xv));
            }
            if let Some(dw) = cg.dw {
                accumulate(grads, nodes, *w, with_shape(dw, wv));
            }
            if let (Some(b), Some(db)) = (b, cg.db) {
                accumulate(grads, nodes, *b, with_shape(db, val(*b)));
            }
        }
        Op::ConvTranspose2d { x, w, b, geom } => {
            let xv = val(*x);
            let wv = val(*w);
            let (n, cin) = (xv.shape()[0], xv.shape()[1]);
            let cg = kernels::conv_transpose2d_backward(
                xv.data(),
                n,
                wv.data(),
                cin,
                geom,
                g.data(),
                rg(*x),
                rg(*w),
                b.is_some_and(rg),
            );
            if let Some(dx) = cg.dx {
                accumulate(grads, nodes, *x, with_shape(dx, xv));
            }
            if let Some(dw) = cg.dw {
                accumulate(grads, nodes, *w, with_shape(dw, wv));
            }
            if let (Some(b), Some(db)) = (b, cg.db) {
                accumulate(grads, nodes, *b, with_shape(db, val(*b)));
            }
        }
        Op::InstanceNorm {
            x,
            gamma,
            beta,
            cache,
        } => {
            let xv = val(*x);
            let (n, c, h, w) = xv.dims4()?;
            let gv = val(*gamma);
            let (dx, dgamma, dbeta) =
                kernels::instance_norm_backward(cache, g.data(), n, c, h * w, gv.data());
            accumulate(grads, nodes, *x, with_shape(dx, xv));
            accumulate(grads, nodes, *gamma, with_shape(dgamma, gv));
            accumulate(grads, nodes, *beta, with_shape(dbeta, val(*beta)));
        }
        Op::ConcatChannels(parts) => {
            let (n, c_total, h, w) = g.dims4()?;
            let plane = h * w;
            let mut offset = 0;
            for &p in parts {
                let pv = val(p);
                let pc = pv.shape()[1];
                if rg(p) {
                    let mut d = Vec::with_capacity(pv.numel());
                    for b in 0..n {
                        let start = (b * c_total + offset) * plane;
                        d.extend_from_slice(&g.data()[start..start + pc * plane]);
                    }
                    accumulate(grads, nodes, p, with_shape(d, pv));
                }
                offset += pc;
            }
        }
        Op::ChannelMax { x, argmax } => {
            let xv = val(*x);
            let mut d = vec![0.0; xv.numel()];
            for (i, &src) in argmax.iter().enumerate() {
                d[src] += g.data()[i];
            }
            accumulate(grads, nodes, *x, with_shape(d, xv));
        }
        Op::ChannelMean(x) => {
            let xv = val(*x);
            let (n, c, h, w) = xv.dims4()?;
            let plane = h * w;
            let mut d = vec![0.0; xv.numel()];
            for b in 0..n {
                let gp = &g.data()[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    for (dst, gv) in d[off..off + plane].iter_mut().zip(gp) {
                        *dst = gv / c as f64;
                    }
                }
            }
            accumulate(grads, nodes, *x, with_shape(d, xv));
        }
        Op::MaxPool2 { x, argmax } => {
            let xv = val(*x);
            let mut d = vec![0.0; xv.numel()];
            for (i, &src) in argmax.iter().enumerate() {
                d[src] += g.data()[i];
            }
            accumulate(grads, nodes, *x, with_shape(d, xv));
        }
        Op::AvgPool2(x) => {
            let xv = val(*x);
            let (n, c, h, w) = xv.dims4()?;
            let (oh, ow) = (h / 2, w / 2);
            let mut d = vec![0.0; xv.numel()];
            for p in 0..n * c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = g.data()[(p * oh + oy) * ow + ox] * 0.25;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            d[(p * h + 2 * oy + dy) * w + 2 * ox + dx] += gv;
                        }
                    }
                }
            }
            accumulate(grads, nodes, *x, with_shape(d, xv));
        }
        Op::Gram(x) => {
            let xv = val(*x);
            let (n, c, h, w) = xv.dims4()?;
            let p = h * w;
            let scale = 1.0 / (c * h * w) as f64;
            let mut d = vec![0.0; xv.numel()];
            for b in 0..n {
                let gb = &g.data()[b * c * c..(b + 1) * c * c];
                let sym: Vec<f64> = (0..c * c)
                    .map(|k| (gb[k] + gb[(k % c) * c + k / c]) * scale)
                    .collect();
                let a = &xv.data()[b * c * p..(b + 1) * c * p];
                kernels::gemm(c, c, p, &sym, false, a, false, &mut d[b * c * p..(b + 1) * c * p], 0.0);
            }
            accumulate(grads, nodes, *x, with_shape(d, xv));
        }
    }
    Ok(())
}

/// Sums `g` over the axes where `shape` has extent 1 but `g` does not.
fn reduce_to_shape(g: &Tensor, shape: &[usize]) -> Tensor {
    let gshape = g.shape();
    let mut out = Tensor::zeros(shape.to_vec());
    let rank = gshape.len();
    let mut src_strides = vec![0usize; rank];
    let mut acc = 1;
    for ax in (0..rank).rev() {
        src_strides[ax] = if shape[ax] == 1 { 0 } else { acc };
        acc *= shape[ax];
    }
    let mut idx = vec![0usize; rank];
    let od = out.data_mut();
    for &gv in g.data() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        od[off] += gv;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < gshape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

fn broadcast_data(src: &Tensor, shape: &[usize]) -> Tensor {
    let sshape = src.shape();
    let rank = shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for ax in (0..rank).rev() {
        strides[ax] = if sshape[ax] == 1 { 0 } else { acc };
        acc *= sshape[ax];
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    for _ in 0..numel {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        data.push(src.data()[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::new(shape.to_vec(), data).expect("broadcast shape")
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// The value of a one-element variable.
    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    /// Records the same value as a gradient-free constant.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant((*self.value()).clone())
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'g> {
        self.graph.push(value, op, self.requires_grad())
    }

    fn binary(
        &self,
        other: &Var<'g>,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'g>> {
        let other = self.graph.same(other);
        let a = self.value();
        let b = other.value();
        ensure_same_shape(op_name, a.shape(), b.shape())?;
        let out = a.zip_map(&b, f)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(out, op, rg))
    }

    pub fn add(&self, other: &Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    /// Repeats axes of extent 1 to reach `shape` (same rank required).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value();
        let ok = v.shape().len() == shape.len()
            && v.shape().iter().zip(shape).all(|(&s, &t)| s == t || s == 1);
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_to",
                lhs: v.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        if v.shape() == shape {
            return Ok(*self);
        }
        Ok(self.unary(broadcast_data(&v, shape), Op::Broadcast(self.id)))
    }

    /// Elementwise product with `other` broadcast to this variable's shape.
    pub fn mul_broadcast(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let b = other.broadcast_to(&self.shape())?;
        self.mul(&b)
    }

    pub fn scale(&self, k: f64) -> Var<'g> {
        self.unary(self.value().map(|v| v * k), Op::Scale(self.id, k))
    }

    pub fn neg(&self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, k: f64) -> Var<'g> {
        self.unary(self.value().map(|v| v + k), Op::AddScalar(self.id))
    }

    /// Multiplies every element by the value of a one-element variable.
    pub fn mul_scalar_var(&self, s: &Var<'g>) -> Result<Var<'g>> {
        let s = self.graph.same(s);
        let sv = s.item()?;
        let rg = self.requires_grad() || s.requires_grad();
        Ok(self.graph.push(
            self.value().map(|v| v * sv),
            Op::MulScalarVar { x: self.id, s: s.id },
            rg,
        ))
    }

    pub fn relu(&self) -> Var<'g> {
        self.unary(self.value().map(|v| v.max(0.0)), Op::Relu(self.id))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'g> {
        self.unary(
            self.value().map(|v| if v > 0.0 { v } else { v * slope }),
            Op::LeakyRelu(self.id, slope),
        )
    }

    pub fn tanh(&self) -> Var<'g> {
        self.unary(self.value().map(f64::tanh), Op::Tanh(self.id))
    }

    pub fn sigmoid(&self) -> Var<'g> {
        self.unary(self.value().map(sigmoid), Op::Sigmoid(self.id))
    }

    pub fn abs(&self) -> Var<'g> {
        self.unary(self.value().map(f64::abs), Op::Abs(self.id))
    }

    pub fn ln(&self) -> Var<'g> {
        self.unary(self.value().map(f64::ln), Op::Ln(self.id))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'g> {
        self.unary(self.value().map(|v| v.clamp(lo, hi)), Op::Clamp(self.id, lo, hi))
    }

    pub fn square(&self) -> Var<'g> {
        self.unary(self.value().map(|v| v * v), Op::Square(self.id))
    }

    pub fn sum(&self) -> Var<'g> {
        self.unary(Tensor::scalar(self.value().sum()), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'g> {
        self.unary(Tensor::scalar(self.value().mean()), Op::Mean(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        let v = (*self.value()).clone().reshape(shape.to_vec())?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// 2-D cross-correlation of an NCHW input with `[cout, cin, kh, kw]` weights.
    pub fn conv2d(
        &self,
        weight: &Var<'g>,
        bias: Option<&Var<'g>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g>> {
        let weight = self.graph.same(weight);
        let x = self.value();
        let w = weight.value();
        let (n, c, h, wd) = x.dims4()?;
        let (cout, wc, kh, kw) = w.dims4()?;
        if wc != c {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let geom = Window::for_input(c, h, wd, kh, kw, stride, pad).ok_or_else(|| {
            TensorError::Invalid {
                op: "conv2d",
                msg: format!("kernel {kh}x{kw} does not fit input {h}x{wd} with padding {pad}"),
            }
        })?;
        let bias_val = bias.map(|b| self.graph.same(b).value());
        if let Some(bv) = &bias_val {
            if bv.shape() != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![cout],
                    rhs: bv.shape().to_vec(),
                });
            }
        }
        let out = kernels::conv2d_forward(
            x.data(),
            n,
            w.data(),
            bias_val.as_deref().map(Tensor::data),
            cout,
            &geom,
        );
        let rg = self.requires_grad()
            || weight.requires_grad()
            || bias.is_some_and(|b| b.requires_grad());
        Ok(self.graph.push(
            Tensor::new([n, cout, geom.out_h, geom.out_w], out)?,
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
                geom,
            },
            rg,
        ))
    }

    /// Transposed convolution with `[cin, cout, kh, kw]` weights.
    /// Output side is `(in - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(
        &self,
        weight: &Var<'g>,
        bias: Option<&Var<'g>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g>> {
        let weight = self.graph.same(weight);
        let x = self.value();
        let w = weight.value();
        let (n, cin, h, wd) = x.dims4()?;
        let (wcin, cout, kh, kw) = w.dims4()?;
        if wcin != cin || stride == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let oh = ((h - 1) * stride + kh).checked_sub(2 * pad);
        let ow = ((wd - 1) * stride + kw).checked_sub(2 * pad);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(TensorError::Invalid {
                op: "conv_transpose2d",
                msg: "padding larger than output".into(),
            });
        };
        let geom = Window::for_input(cout, oh, ow, kh, kw, stride, pad)
            .filter(|g| g.out_h == h && g.out_w == wd)
            .ok_or_else(|| TensorError::Invalid {
                op: "conv_transpose2d",
                msg: "inconsistent geometry".into(),
            })?;
        let bias_val = bias.map(|b| self.graph.same(b).value());
        if let Some(bv) = &bias_val {
            if bv.shape() != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv_transpose2d bias",
                    lhs: vec![cout],
                    rhs: bv.shape().to_vec(),
                });
            }
        }
        let out = kernels::conv_transpose2d_forward(
            x.data(),
            n,
            w.data(),
            bias_val.as_deref().map(Tensor::data),
            cin,
            &geom,
        );
        let rg = self.requires_grad()
            || weight.requires_grad()
            || bias.is_some_and(|b| b.requires_grad());
        Ok(self.graph.push(
            Tensor::new([n, cout, oh, ow], out)?,
            Op::ConvTranspose2d {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
                geom,
            },
            rg,
        ))
    }

    /// Per-sample, per-channel normalization over the spatial axes with an affine transform.
    pub fn instance_norm(&self, gamma: &Var<'g>, beta: &Var<'g>, eps: f64) -> Result<Var<'g>> {
        let gamma = self.graph.same(gamma);
        let beta = self.graph.same(beta);
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "instance_norm",
                lhs: x.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let (out, cache) =
            kernels::instance_norm_forward(x.data(), n, c, h * w, gv.data(), bv.data(), eps);
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Ok(self.graph.push(
            Tensor::new([n, c, h, w], out)?,
            Op::InstanceNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                cache,
            },
            rg,
        ))
    }

    /// Maximum over the channel axis, keeping it as extent 1.
    pub fn channel_max(&self) -> Result<Var<'g>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        if c == 0 {
            return Err(TensorError::Empty("channel_max"));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * plane);
        let mut argmax = Vec::with_capacity(n * plane);
        for b in 0..n {
            for p in 0..plane {
                let mut best = b * c * plane + p;
                for ch in 1..c {
                    let idx = (b * c + ch) * plane + p;
                    if x.data()[idx] > x.data()[best] {
                        best = idx;
                    }
                }
                out.push(x.data()[best]);
                argmax.push(best);
            }
        }
        Ok(self.unary(
            Tensor::new([n, 1, h, w], out)?,
            Op::ChannelMax { x: self.id, argmax },
        ))
    }

    /// Mean over the channel axis, keeping it as extent 1.
    pub fn channel_mean(&self) -> Result<Var<'g>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        if c == 0 {
            return Err(TensorError::Empty("channel_mean"));
        }
        let plane = h * w;
        let mut out = vec![0.0; n * plane];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for (o, v) in out[b * plane..(b + 1) * plane]
                    .iter_mut()
                    .zip(&x.data()[off..off + plane])
                {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= c as f64);
        Ok(self.unary(Tensor::new([n, 1, h, w], out)?, Op::ChannelMean(self.id)))
    }

    /// 2×2 max pooling with stride 2.
    pub fn max_pool2(&self) -> Result<Var<'g>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (p * h + 2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (p * h + 2 * oy + dy) * w + 2 * ox + dx;
                        if x.data()[idx] > x.data()[best] {
                            best = idx;
                        }
                    }
                    out.push(x.data()[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.unary(
            Tensor::new([n, c, oh, ow], out)?,
            Op::MaxPool2 { x: self.id, argmax },
        ))
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2(&self) -> Result<Var<'g>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let at = |dy: usize, dx: usize| x.data()[(p * h + 2 * oy + dy) * w + 2 * ox + dx];
                    out.push(0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)));
                }
            }
        }
        Ok(self.unary(Tensor::new([n, c, oh, ow], out)?, Op::AvgPool2(self.id)))
    }

    /// Per-sample Gram matrix `A·Aᵀ / (C·H·W)` of the `[C, H·W]` feature matrix; shape `[N, C, C]`.
    pub fn gram(&self) -> Result<Var<'g>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let p = h * w;
        let scale = 1.0 / (c * h * w) as f64;
        let mut out = vec![0.0; n * c * c];
        for b in 0..n {
            let a = &x.data()[b * c * p..(b + 1) * c * p];
            kernels::gemm(c, p, c, a, false, a, true, &mut out[b * c * c..(b + 1) * c * c], 0.0);
        }
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(self.unary(Tensor::new([n, c, c], out)?, Op::Gram(self.id)))
    }
}

/// Logistic function evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
