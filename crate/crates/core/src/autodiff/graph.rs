use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::LN_2;

use super::tensor::{split_axis, Tensor};
use super::ParameterSet;
use crate::error::{invalid, Error, Result};
use crate::math;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    AddRow(NodeId, NodeId),
    Square(NodeId),
    Log2(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    MatMul(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumAxis(NodeId, usize),
    Reshape(NodeId),
    Concat(Vec<NodeId>, usize),
    Slice(NodeId, usize, usize),
    Conv2d {
        x: NodeId,
        k: NodeId,
        b: NodeId,
        geom: ConvGeom,
    },
    MaxPool(NodeId, Vec<usize>),
    CappedDiv(NodeId, NodeId, Vec<bool>),
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::AddRow(..) => "add_row",
            Op::Square(..) => "square",
            Op::Log2(..) => "log2",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::MatMul(..) => "matmul",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool(..) => "maxpool2d",
            Op::CappedDiv(..) => "capped_div",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    sh: usize,
    sw: usize,
    pad_top: usize,
    pad_left: usize,
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of eagerly evaluated operations supporting one reverse sweep at a time.
///
/// Nodes are appended in creation order, which is always a topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    adjoints: Vec<Option<Vec<f64>>>,
    bindings: Vec<(usize, NodeId)>,
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn op_tag(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.tag()
    }

    /// Leaf that receives no adjoint.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose adjoint is tracked.
    pub fn variable(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf holding entry `idx` of `params`; its adjoint is reported by [`Graph::param_grads`].
    pub fn param(&mut self, params: &ParameterSet, idx: usize) -> NodeId {
        let id = self.variable(params.tensor(idx));
        self.bindings.push((idx, id));
        id
    }

    /// Binds every entry of `params`, in order.
    pub fn params(&mut self, params: &ParameterSet) -> Vec<NodeId> {
        (0..params.len()).map(|i| self.param(params, i)).collect()
    }

    fn zip(&self, a: NodeId, b: NodeId, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(mismatch(op, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(va.shape(), data)
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let va = &self.nodes[a.0].value;
        Tensor::new(va.shape(), va.data().iter().map(|x| f(*x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.map(a, |x| s * x);
        let ng = self.needs(&[a]);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.map(a, |x| x + s);
        let ng = self.needs(&[a]);
        self.push(v, Op::AddScalar(a), ng)
    }

    /// Adds the vector `b` to every row of `a` (broadcast over the last axis).
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let n = va.shape().last().copied().unwrap_or(0);
        if vb.rank() != 1 || vb.len() != n || n == 0 {
            return Err(mismatch("add_row", va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + vb.data()[i % n])
            .collect();
        let v = Tensor::new(va.shape(), data)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::AddRow(a, b), ng))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, |x| x * x);
        let ng = self.needs(&[a]);
        self.push(v, Op::Square(a), ng)
    }

    pub fn log2(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, math::log2);
        let ng = self.needs(&[a]);
        self.push(v, Op::Log2(a), ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        let ng = self.needs(&[a]);
        self.push(v, Op::Relu(a), ng)
    }

    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn ramp(&mut self, a: NodeId) -> NodeId {
        self.relu(a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, math::sigmoid);
        let ng = self.needs(&[a]);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, math::tanh);
        let ng = self.needs(&[a]);
        self.push(v, Op::Tanh(a), ng)
    }

    /// Matrix product of `[m, k] x [k, n]`, or batched `[b, m, k] x [b, k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (va.shape(), vb.shape());
        let (batch, m, k, n) = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => (1, sa[0], sa[1], sb[1]),
            (3, 3) if sa[0] == sb[0] && sa[2] == sb[1] => (sa[0], sa[1], sa[2], sb[2]),
            _ => return Err(mismatch("matmul", sa, sb)),
        };
        let mut out = vec![0.0; batch * m * n];
        for t in 0..batch {
            let ad = &va.data()[t * m * k..(t + 1) * m * k];
            let bd = &vb.data()[t * k * n..(t + 1) * k * n];
            let od = &mut out[t * m * n..(t + 1) * m * n];
            mm_acc(ad, bd, od, m, k, n);
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let v = Tensor::new(&shape, out)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.data().iter().sum();
        let ng = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if va.is_empty() {
            return Err(invalid("mean of an empty tensor"));
        }
        let s: f64 = va.data().iter().sum();
        let m = s / va.len() as f64;
        let ng = self.needs(&[a]);
        Ok(self.push(Tensor::scalar(m), Op::Mean(a), ng))
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if axis >= va.rank() {
            return Err(invalid(format!("axis {axis} out of range for {:?}", va.shape())));
        }
        let (outer, len, inner) = split_axis(va.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &va.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = va.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(&shape, out)?;
        let ng = self.needs(&[a]);
        Ok(self.push(v, Op::SumAxis(a, axis), ng))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.nodes[a.0].value.clone().reshaped(shape)?;
        let ng = self.needs(&[a]);
        Ok(self.push(v, Op::Reshape(a), ng))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| invalid("concat of zero tensors"))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(invalid(format!("axis {axis} out of range for {s0:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let same_rank = s.len() == s0.len();
            if !same_rank || s.iter().zip(&s0).enumerate().any(|(i, (x, y))| i != axis && x != y) {
                return Err(mismatch("concat", &s0, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&s0, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = &self.nodes[p.0].value;
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let v = Tensor::new(&shape, out)?;
        let ng = self.needs(parts);
        Ok(self.push(v, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// Elements `start .. start + len` along `axis`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if axis >= va.rank() || start + len > va.shape()[axis] || len == 0 {
            return Err(invalid(format!(
                "slice {start}..{} on axis {axis} of {:?}",
                start + len,
                va.shape()
            )));
        }
        let (outer, full, inner) = split_axis(va.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&va.data()[base..base + len * inner]);
        }
        let mut shape = va.shape().to_vec();
        shape[axis] = len;
        let v = Tensor::new(&shape, out)?;
        let ng = self.needs(&[a]);
        Ok(self.push(v, Op::Slice(a, axis, start), ng))
    }

    /// Cross-correlation of `x` (`[H, W, C]` or `[B, H, W, C]`) with kernels
    /// `[F, kh, kw, C]` plus bias `[F]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernels: NodeId,
        bias: NodeId,
        pad: Padding,
        stride: (usize, usize),
    ) -> Result<NodeId> {
        let (vx, vk, vb) = (
            &self.nodes[x.0].value,
            &self.nodes[kernels.0].value,
            &self.nodes[bias.0].value,
        );
        let (batch, h, w, c) = match vx.shape() {
            [h, w, c] => (1, *h, *w, *c),
            [b, h, w, c] => (*b, *h, *w, *c),
            s => return Err(invalid(format!("conv2d input must be rank 3 or 4, got {s:?}"))),
        };
        let [f, kh, kw, kc] = match vk.shape() {
            [a, b, c, d] => [*a, *b, *c, *d],
            s => return Err(invalid(format!("conv2d kernels must be rank 4, got {s:?}"))),
        };
        if kc != c {
            return Err(mismatch("conv2d", vx.shape(), vk.shape()));
        }
        if vb.shape() != [f] {
            return Err(mismatch("conv2d bias", vk.shape(), vb.shape()));
        }
        let (sh, sw) = stride;
        if sh == 0 || sw == 0 {
            return Err(invalid("conv2d stride must be positive"));
        }
        let (oh, ow, pad_top, pad_left) = match pad {
            Padding::Same => {
                let oh = h.div_ceil(sh);
                let ow = w.div_ceil(sw);
                let ph = ((oh - 1) * sh + kh).saturating_sub(h);
                let pw = ((ow - 1) * sw + kw).saturating_sub(w);
                (oh, ow, ph / 2, pw / 2)
            }
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(invalid(format!(
                        "kernel {kh}x{kw} larger than input {h}x{w}"
                    )));
                }
                ((h - kh) / sh + 1, (w - kw) / sw + 1, 0, 0)
            }
        };
        let geom = ConvGeom {
            batch,
            h,
            w,
            c,
            f,
            kh,
            kw,
            oh,
            ow,
            sh,
            sw,
            pad_top,
            pad_left,
        };
        let mut out = vec![0.0; batch * oh * ow * f];
        let (xd, kd, bd) = (vx.data(), vk.data(), vb.data());
        for_each_tap(&geom, |o, xi, ki| out[o] += xd[xi] * kd[ki]);
        for (i, v) in out.iter_mut().enumerate() {
            *v += bd[i % f];
        }
        let shape = if vx.rank() == 3 {
            vec![oh, ow, f]
        } else {
            vec![batch, oh, ow, f]
        };
        let v = Tensor::new(&shape, out)?;
        let ng = self.needs(&[x, kernels, bias]);
        Ok(self.push(
            v,
            Op::Conv2d {
                x,
                k: kernels,
                b: bias,
                geom,
            },
            ng,
        ))
    }

    /// Max pooling with a `kh x kw` window and valid padding over `[H, W, C]` or
    /// `[B, H, W, C]`. Ties route the adjoint to the first maximum.
    pub fn maxpool2d(&mut self, x: NodeId, kh: usize, kw: usize, sh: usize, sw: usize) -> Result<NodeId> {
        let vx = &self.nodes[x.0].value;
        let (batch, h, w, c) = match vx.shape() {
            [h, w, c] => (1, *h, *w, *c),
            [b, h, w, c] => (*b, *h, *w, *c),
            s => return Err(invalid(format!("maxpool2d input must be rank 3 or 4, got {s:?}"))),
        };
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(invalid("pool window and stride must be positive"));
        }
        if kh > h || kw > w {
            return Err(invalid(format!("pool window {kh}x{kw} larger than input {h}x{w}")));
        }
        let oh = (h - kh) / sh + 1;
        let ow = (w - kw) / sw + 1;
        let xd = vx.data();
        let mut out = Vec::with_capacity(batch * oh * ow * c);
        let mut arg = Vec::with_capacity(batch * oh * ow * c);
        for b in 0..batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut at = usize::MAX;
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let i = ((b * h + oy * sh + dy) * w + ox * sw + dx) * c + ch;
                                if xd[i] > best || at == usize::MAX {
                                    best = xd[i];
                                    at = i;
                                }
                            }
                        }
                        out.push(best);
                        arg.push(at);
                    }
                }
            }
        }
        let shape = if vx.rank() == 3 {
            vec![oh, ow, c]
        } else {
            vec![batch, oh, ow, c]
        };
        let v = Tensor::new(&shape, out)?;
        let ng = self.needs(&[x]);
        Ok(self.push(v, Op::MaxPool(x, arg), ng))
    }

    /// `min(num / den, cap)` element-wise. A non-positive denominator or a
    /// quotient at or above `cap` yields `cap` with zero gradient.
    pub fn capped_div(&mut self, num: NodeId, den: NodeId, cap: f64) -> Result<NodeId> {
        let v = self.zip(num, den, "capped_div", |n, d| capped_quotient(n, d, cap).0)?;
        let hit = {
            let nd = self.nodes[num.0].value.data();
            let dd = self.nodes[den.0].value.data();
            nd.iter().zip(dd).map(|(n, d)| capped_quotient(*n, *d, cap).1).collect()
        };
        let ng = self.needs(&[num, den]);
        Ok(self.push(v, Op::CappedDiv(num, den, hit), ng))
    }

    /// Reverse sweep from the scalar `root`. Adjoints from a previous sweep are discarded.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                rv.shape()
            )));
        }
        self.adjoints = vec![None; self.nodes.len()];
        self.adjoints[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.adjoints[i].take() else {
                continue;
            };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g);
            }
            self.adjoints[i] = Some(g);
        }
        Ok(())
    }

    /// Adjoint of `id` after [`Graph::backward`]; `None` if it does not affect the root.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.adjoints.get(id.0).and_then(|a| a.as_deref())
    }

    /// Adjoints of every entry of `params`, zero where an entry was not bound.
    pub fn param_grads(&self, params: &ParameterSet) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = (0..params.len()).map(|i| vec![0.0; params.numel(i)]).collect();
        for &(idx, id) in &self.bindings {
            if let Some(g) = self.grad(id) {
                for (o, v) in out[idx].iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        out
    }

    fn add_into(&mut self, target: NodeId, f: impl FnOnce(&mut [f64], &[Node])) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        let len = self.nodes[target.0].value.len();
        let mut buf = self.adjoints[target.0].take().unwrap_or_else(|| vec![0.0; len]);
        f(&mut buf, &self.nodes);
        self.adjoints[target.0] = Some(buf);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_into(a, |d, _| axpy(d, g, 1.0));
                self.add_into(b, |d, _| axpy(d, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.add_into(a, |d, _| axpy(d, g, 1.0));
                self.add_into(b, |d, _| axpy(d, g, -1.0));
            }
            Op::Mul(a, b) => {
                self.add_into(a, |d, n| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(n[b.0].value.data()) {
                        *d += g * y;
                    }
                });
                self.add_into(b, |d, n| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(n[a.0].value.data()) {
                        *d += g * x;
                    }
                });
            }
            Op::Scale(a, s) => self.add_into(a, |d, _| axpy(d, g, s)),
            Op::AddScalar(a) | Op::Reshape(a) => self.add_into(a, |d, _| axpy(d, g, 1.0)),
            Op::AddRow(a, b) => {
                self.add_into(a, |d, _| axpy(d, g, 1.0));
                self.add_into(b, |d, _| {
                    let n = d.len();
                    for (j, gv) in g.iter().enumerate() {
                        d[j % n] += gv;
                    }
                });
            }
            Op::Square(a) => self.add_into(a, |d, n| {
                for ((d, g), x) in d.iter_mut().zip(g).zip(n[a.0].value.data()) {
                    *d += 2.0 * x * g;
                }
            }),
            Op::Log2(a) => self.add_into(a, |d, n| {
                for ((d, g), x) in d.iter_mut().zip(g).zip(n[a.0].value.data()) {
                    *d += g / (x * LN_2);
                }
            }),
            Op::Relu(a) => self.add_into(a, |d, n| {
                for ((d, g), x) in d.iter_mut().zip(g).zip(n[a.0].value.data()) {
                    if *x > 0.0 {
                        *d += g;
                    }
                }
            }),
            Op::Sigmoid(a) => self.add_into(a, |d, n| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(n[i].value.data()) {
                    *d += g * y * (1.0 - y);
                }
            }),
            Op::Tanh(a) => self.add_into(a, |d, n| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(n[i].value.data()) {
                    *d += g * (1.0 - y * y);
                }
            }),
            Op::MatMul(a, b) => {
                let sa = self.nodes[a.0].value.shape().to_vec();
                let sb = self.nodes[b.0].value.shape().to_vec();
                let (batch, m, k, n) = if sa.len() == 2 {
                    (1, sa[0], sa[1], sb[1])
                } else {
                    (sa[0], sa[1], sa[2], sb[2])
                };
                // dA = G Bᵀ, dB = Aᵀ G
                self.add_into(a, |d, nodes| {
                    let bd = nodes[b.0].value.data();
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let bt = &bd[t * k * n..(t + 1) * k * n];
                        let dt = &mut d[t * m * k..(t + 1) * m * k];
                        for r in 0..m {
                            for c in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += gt[r * n + j] * bt[c * n + j];
                                }
                                dt[r * k + c] += s;
                            }
                        }
                    }
                });
                self.add_into(b, |d, nodes| {
                    let ad = nodes[a.0].value.data();
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let at = &ad[t * m * k..(t + 1) * m * k];
                        let dt = &mut d[t * k * n..(t + 1) * k * n];
                        for r in 0..m {
                            for c in 0..k {
                                let av = at[r * k + c];
                                if av == 0.0 {
                                    continue;
                                }
                                let row = &mut dt[c * n..(c + 1) * n];
                                for (x, gv) in row.iter_mut().zip(&gt[r * n..(r + 1) * n]) {
                                    *x += av * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => self.add_into(a, |d, _| d.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => self.add_into(a, |d, _| {
                let s = g[0] / d.len() as f64;
                d.iter_mut().for_each(|x| *x += s);
            }),
            Op::SumAxis(a, axis) => self.add_into(a, |d, n| {
                let (outer, len, inner) = split_axis(n[a.0].value.shape(), axis);
                for o in 0..outer {
                    for l in 0..len {
                        let dst = &mut d[(o * len + l) * inner..(o * len + l + 1) * inner];
                        axpy(dst, &g[o * inner..(o + 1) * inner], 1.0);
                    }
                }
            }),
            Op::Concat(parts, axis) => {
                let out_shape = self.nodes[i].value.shape().to_vec();
                let (outer, total, inner) = split_axis(&out_shape, axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.shape()[axis];
                    self.add_into(p, |d, _| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            axpy(
                                &mut d[o * len * inner..(o + 1) * len * inner],
                                &g[src..src + len * inner],
                                1.0,
                            );
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice(a, axis, start) => {
                let len = self.nodes[i].value.shape()[axis];
                self.add_into(a, |d, n| {
                    let (outer, full, inner) = split_axis(n[a.0].value.shape(), axis);
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        axpy(
                            &mut d[dst..dst + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                            1.0,
                        );
                    }
                });
            }
            Op::Conv2d { x, k, b, geom } => {
                self.add_into(x, |d, n| {
                    let kd = n[k.0].value.data();
                    for_each_tap(&geom, |o, xi, ki| d[xi] += g[o] * kd[ki]);
                });
                self.add_into(k, |d, n| {
                    let xd = n[x.0].value.data();
                    for_each_tap(&geom, |o, xi, ki| d[ki] += g[o] * xd[xi]);
                });
                self.add_into(b, |d, _| {
                    for (j, gv) in g.iter().enumerate() {
                        d[j % geom.f] += gv;
                    }
                });
            }
            Op::MaxPool(a, arg) => self.add_into(a, |d, _| {
                for (gv, at) in g.iter().zip(&arg) {
                    d[*at] += gv;
                }
            }),
            Op::CappedDiv(num, den, hit) => {
                let hit = &hit;
                self.add_into(num, |d, n| {
                    let dd = n[den.0].value.data();
                    for j in 0..d.len() {
                        if !hit[j] {
                            d[j] += g[j] / dd[j];
                        }
                    }
                });
                self.add_into(den, |d, n| {
                    let nd = n[num.0].value.data();
                    let dd = n[den.0].value.data();
                    for j in 0..d.len() {
                        if !hit[j] {
                            d[j] -= g[j] * nd[j] / (dd[j] * dd[j]);
                        }
                    }
                });
            }
        }
    }
}

/// Quotient and whether the cap was applied.
fn capped_quotient(n: f64, d: f64, cap: f64) -> (f64, bool) {
    if !(d > 0.0) {
        return (cap, true);
    }
    let q = n / d;
    if q < cap {
        (q, false)
    } else {
        (cap, true)
    }
}

fn axpy(d: &mut [f64], g: &[f64], s: f64) {
    for (d, g) in d.iter_mut().zip(g) {
        *d += s * g;
    }
}

/// `out += a · b` for row-major `a: [m, k]`, `b: [k, n]`.
fn mm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let av = a[r * k + c];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[c * n..(c + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// Calls `f(out_index, input_index, kernel_index)` for every multiply of the convolution.
fn for_each_tap(geom: &ConvGeom, mut f: impl FnMut(usize, usize, usize)) {
    let g = geom;
    for b in 0..g.batch {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                for fi in 0..g.f {
                    let o = ((b * g.oh + oy) * g.ow + ox) * g.f + fi;
                    for dy in 0..g.kh {
                        let y = (oy * g.sh + dy) as isize - g.pad_top as isize;
                        if y < 0 || y >= g.h as isize {
                            continue;
                        }
                        for dx in 0..g.kw {
                            let x = (ox * g.sw + dx) as isize - g.pad_left as isize;
                            if x < 0 || x >= g.w as isize {
                                continue;
                            }
                            let xi = ((b * g.h + y as usize) * g.w + x as usize) * g.c;
                            let ki = ((fi * g.kh + dy) * g.kw + dx) * g.c;
                            for ch in 0..g.c {
                                f(o, xi + ch, ki + ch);
                            }
                        }
                    }
                }
            }
        }
    }
}
