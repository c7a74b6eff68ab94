//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] records every primitive applied to its nodes and replays the
//! tape in reverse on [`Graph::backward`]. The supported primitive set is
//! fixed: matmul (2-D or batched), elementwise add/multiply, scalar scale,
//! broadcast add over the last axis, reshape, axis permutation, concatenation,
//! mean over axes, softmax over the last axis, layer normalization over the
//! last axis, GELU, and mean-squared-error reduction.
//!
//! There is no gradient retention: a graph is consumed by `backward` and a
//! fresh graph is built per evaluation. Higher-order derivatives are out of
//! scope.

use crate::error::{Error, Result};
use crate::tensor::{mm_nn, mm_nt, mm_tn, permute_data, scalar, strides, Element, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op<E> {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, E),
    BroadcastAdd(NodeId, NodeId),
    Reshape(NodeId),
    Permute(NodeId, Vec<usize>),
    Concat(Vec<NodeId>, usize),
    Mean(NodeId, Vec<usize>),
    Softmax(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: E },
    Gelu(NodeId),
    Mse(NodeId, NodeId),
}

struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
    needs_grad: bool,
    grad: Option<Vec<E>>,
}

/// Recorded computation tape.
pub struct Graph<E: Element> {
    nodes: Vec<Node<E>>,
    consumed: bool,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    /// Register an input tensor. Gradients are tracked for it (and everything
    /// downstream) when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: requires_grad, grad: None });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. this node, if tracked.
    pub fn grad(&self, id: NodeId) -> Option<&[E]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Vec<E>> {
        self.nodes[id.0].grad.take()
    }

    /// Move a node's value out of the graph (the node is left scalar-zero).
    pub fn take_value(&mut self, id: NodeId) -> Tensor<E> {
        std::mem::replace(&mut self.nodes[id.0].value, Tensor::zeros(vec![1]))
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, needs_grad: bool, name: &'static str) -> Result<NodeId> {
        if !value.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op, needs_grad, grad: None });
        Ok(id)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ── primitives ──────────────────────────────────────────────────────

    /// Matrix multiply. 2-D operands, or batched with identical leading dims:
    /// `[.., m, k] · [.., k, n] -> [.., m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ashape, bshape) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if ashape.len() < 2 || bshape.len() != ashape.len() || ashape[..ashape.len() - 2] != bshape[..bshape.len() - 2]
        {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("incompatible operand shapes {:?} x {:?}", ashape, bshape),
            });
        }
        let nd = ashape.len();
        let (m, k, n) = (ashape[nd - 2], ashape[nd - 1], bshape[nd - 1]);
        if bshape[nd - 2] != k {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dims differ: {:?} x {:?}", ashape, bshape),
            });
        }
        let batch: usize = ashape[..nd - 2].iter().product();
        let mut out_shape = ashape[..nd - 2].to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![E::zero(); batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for bi in 0..batch {
            mm_nn(&ad[bi * m * k..(bi + 1) * m * k], &bd[bi * k * n..(bi + 1) * k * n], &mut out[bi * m * n..(bi + 1) * m * n], m, k, n);
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(out_shape, out)?, Op::Matmul(a, b), needs, "matmul")
    }

    /// Elementwise addition of same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise (Hadamard) product of same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(E, E) -> E,
        op: Op<E>,
    ) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                op: name,
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        let data: Vec<E> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, data)?, op, needs, name)
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let c: E = scalar(c);
        let data: Vec<E> = self.value(a).data().iter().map(|&x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        self.push(Tensor::new(shape, data)?, Op::Scale(a, c), needs, "scale")
    }

    /// Add a 1-D bias over the last axis: `[.., D] + [D]`.
    pub fn broadcast_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        let d = *xs.last().ok_or_else(|| Error::ShapeMismatch {
            op: "broadcast_add",
            detail: "operand has no axes".into(),
        })?;
        if bs != [d] {
            return Err(Error::ShapeMismatch {
                op: "broadcast_add",
                detail: format!("bias shape {:?} does not match last axis of {:?}", bs, xs),
            });
        }
        let bd = self.value(bias).data().to_vec();
        let data: Vec<E> =
            self.value(x).data().iter().enumerate().map(|(i, &v)| v + bd[i % d]).collect();
        let needs = self.needs(x) || self.needs(bias);
        self.push(Tensor::new(xs, data)?, Op::BroadcastAdd(x, bias), needs, "broadcast_add")
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?} changes element count", self.value(a).shape(), shape),
            });
        }
        let data = self.value(a).data().to_vec();
        let needs = self.needs(a);
        self.push(Tensor::new(shape, data)?, Op::Reshape(a), needs, "reshape")
    }

    /// General axis permutation (transpose).
    pub fn permute(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId> {
        let shape = self.value(a).shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true)) {
            return Err(Error::ShapeMismatch {
                op: "permute",
                detail: format!("axes {:?} invalid for shape {:?}", axes, shape),
            });
        }
        let (data, out_shape) = permute_data(self.value(a).data(), shape, axes);
        let needs = self.needs(a);
        self.push(Tensor::new(out_shape, data)?, Op::Permute(a, axes.to_vec()), needs, "permute")
    }

    /// Concatenate tensors along `axis`. All other extents must agree.
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = inputs.first().ok_or_else(|| {
            Error::InvalidArgument("concat requires at least one input".into())
        })?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                detail: format!("axis {} out of range for shape {:?}", axis, base),
            });
        }
        let mut axis_total = 0usize;
        for &id in inputs {
            let s = self.value(id).shape();
            if s.len() != base.len()
                || s.iter().enumerate().any(|(d, &e)| d != axis && e != base[d])
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    detail: format!("shape {:?} incompatible with {:?} along axis {}", s, base, axis),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = vec![E::zero(); out_shape.iter().product()];
        let row = axis_total * inner;
        let mut offset = 0usize;
        for &id in inputs {
            let s_axis = self.value(id).shape()[axis];
            let src = self.value(id).data();
            for o in 0..outer {
                let dst_start = o * row + offset * inner;
                let src_start = o * s_axis * inner;
                data[dst_start..dst_start + s_axis * inner]
                    .copy_from_slice(&src[src_start..src_start + s_axis * inner]);
            }
            offset += s_axis;
        }
        let needs = inputs.iter().any(|&id| self.needs(id));
        self.push(Tensor::new(out_shape, data)?, Op::Concat(inputs.to_vec(), axis), needs, "concat")
    }

    /// Mean over the given axes (removed from the shape; all axes -> scalar).
    pub fn mean(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId> {
        let shape = self.value(a).shape().to_vec();
        let mut ax: Vec<usize> = axes.to_vec();
        ax.sort_unstable();
        ax.dedup();
        if ax.iter().any(|&d| d >= shape.len()) || ax.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "mean",
                detail: format!("axes {:?} invalid for shape {:?}", axes, shape),
            });
        }
        let mut out_shape: Vec<usize> =
            (0..shape.len()).filter(|d| !ax.contains(d)).map(|d| shape[d]).collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let count: usize = ax.iter().map(|&d| shape[d]).product();
        let inv = E::one() / scalar::<E>(count as f64);
        let out_numel: usize = out_shape.iter().product();
        let mut data = vec![E::zero(); out_numel];
        let in_strides = strides(&shape);
        let out_strides = strides(&out_shape);
        for (flat, &v) in self.value(a).data().iter().enumerate() {
            let mut rem = flat;
            let mut of = 0;
            let mut od = 0;
            for d in 0..shape.len() {
                let c = rem / in_strides[d];
                rem %= in_strides[d];
                if !ax.contains(&d) {
                    of += c * out_strides[od];
                    od += 1;
                }
            }
            data[of] = data[of] + v * inv;
        }
        let needs = self.needs(a);
        self.push(Tensor::new(out_shape, data)?, Op::Mean(a, ax), needs, "mean")
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.value(a).shape().to_vec();
        let d = *shape.last().ok_or_else(|| Error::ShapeMismatch {
            op: "softmax",
            detail: "operand has no axes".into(),
        })?;
        let src = self.value(a).data();
        let mut data = vec![E::zero(); src.len()];
        for r in 0..src.len() / d {
            let row = &src[r * d..(r + 1) * d];
            let max = row.iter().fold(E::neg_infinity(), |m, &v| m.max(v));
            let mut sum = E::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                data[r * d + j] = e;
                sum = sum + e;
            }
            for j in 0..d {
                data[r * d + j] = data[r * d + j] / sum;
            }
        }
        let needs = self.needs(a);
        self.push(Tensor::new(shape, data)?, Op::Softmax(a), needs, "softmax")
    }

    /// Layer normalization over the last axis with learned scale and shift.
    /// `gamma` and `beta` must be 1-D of the last-axis extent.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        let d = *shape.last().ok_or_else(|| Error::ShapeMismatch {
            op: "layer_norm",
            detail: "operand has no axes".into(),
        })?;
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                detail: format!(
                    "gamma {:?} / beta {:?} must be [{}]",
                    self.value(gamma).shape(),
                    self.value(beta).shape(),
                    d
                ),
            });
        }
        let eps: E = scalar(eps);
        let src = self.value(x).data();
        let gd = self.value(gamma).data().to_vec();
        let bd = self.value(beta).data().to_vec();
        let inv_d = E::one() / scalar::<E>(d as f64);
        let mut data = vec![E::zero(); src.len()];
        for r in 0..src.len() / d {
            let row = &src[r * d..(r + 1) * d];
            let mut mu = E::zero();
            for &v in row {
                mu = mu + v;
            }
            mu = mu * inv_d;
            let mut var = E::zero();
            for &v in row {
                var = var + (v - mu) * (v - mu);
            }
            var = var * inv_d;
            let inv_s = E::one() / (var + eps).sqrt();
            for j in 0..d {
                data[r * d + j] = (row[j] - mu) * inv_s * gd[j] + bd[j];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(Tensor::new(shape, data)?, Op::LayerNorm { x, gamma, beta, eps }, needs, "layer_norm")
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let data: Vec<E> = self.value(a).data().iter().map(|&x| gelu_fwd(x)).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        self.push(Tensor::new(shape, data)?, Op::Gelu(a), needs, "gelu")
    }

    /// Mean-squared-error reduction to a scalar.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                op: "mse",
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        let n = scalar::<E>(self.value(a).numel() as f64);
        let mut acc = E::zero();
        for (&x, &y) in self.value(a).data().iter().zip(self.value(b).data()) {
            let d = x - y;
            acc = acc + d * d;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![1], vec![acc / n])?, Op::Mse(a, b), needs, "mse")
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Populate gradients of `loss` on every reachable grad-tracked node.
    /// The graph is consumed: a second call is an error (no retention).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].value.shape().to_vec()));
        }
        self.consumed = true;
        self.nodes[loss.0].grad = Some(vec![E::one()]);

        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let grad = self.nodes[i].grad.clone().unwrap();
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => self.bw_matmul(i, a, b, &grad),
                Op::Add(a, b) => {
                    self.accum(a, &grad);
                    self.accum(b, &grad);
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let d: Vec<E> =
                            grad.iter().zip(self.nodes[b.0].value.data()).map(|(&g, &y)| g * y).collect();
                        self.accum(a, &d);
                    }
                    if self.needs(b) {
                        let d: Vec<E> =
                            grad.iter().zip(self.nodes[a.0].value.data()).map(|(&g, &x)| g * x).collect();
                        self.accum(b, &d);
                    }
                }
                Op::Scale(a, c) => {
                    let d: Vec<E> = grad.iter().map(|&g| g * c).collect();
                    self.accum(a, &d);
                }
                Op::BroadcastAdd(x, bias) => {
                    self.accum(x, &grad);
                    if self.needs(bias) {
                        let d = self.nodes[bias.0].value.numel();
                        let mut db = vec![E::zero(); d];
                        for (idx, &g) in grad.iter().enumerate() {
                            db[idx % d] = db[idx % d] + g;
                        }
                        self.accum(bias, &db);
                    }
                }
                Op::Reshape(a) => self.accum(a, &grad),
                Op::Permute(a, axes) => {
                    // apply the inverse permutation to the gradient
                    let mut inv = vec![0usize; axes.len()];
                    for (d, &ax) in axes.iter().enumerate() {
                        inv[ax] = d;
                    }
                    let (d, _) = permute_data(&grad, self.nodes[i].value.shape(), &inv);
                    self.accum(a, &d);
                }
                Op::Concat(inputs, axis) => self.bw_concat(i, &inputs, axis, &grad),
                Op::Mean(a, axes) => self.bw_mean(i, a, &axes, &grad),
                Op::Softmax(a) => {
                    let shape = self.nodes[i].value.shape();
                    let d = *shape.last().unwrap();
                    let out = self.nodes[i].value.data();
                    let mut dx = vec![E::zero(); out.len()];
                    for r in 0..out.len() / d {
                        let (s, g) = (&out[r * d..(r + 1) * d], &grad[r * d..(r + 1) * d]);
                        let mut dot = E::zero();
                        for j in 0..d {
                            dot = dot + s[j] * g[j];
                        }
                        for j in 0..d {
                            dx[r * d + j] = s[j] * (g[j] - dot);
                        }
                    }
                    self.accum(a, &dx);
                }
                Op::LayerNorm { x, gamma, beta, eps } => self.bw_layer_norm(x, gamma, beta, eps, &grad),
                Op::Gelu(a) => {
                    let d: Vec<E> = grad
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(&g, &x)| g * gelu_bwd(x))
                        .collect();
                    self.accum(a, &d);
                }
                Op::Mse(a, b) => {
                    let g = grad[0];
                    let n = scalar::<E>(self.nodes[a.0].value.numel() as f64);
                    let two = scalar::<E>(2.0);
                    if self.needs(a) || self.needs(b) {
                        let d: Vec<E> = self.nodes[a.0]
                            .value
                            .data()
                            .iter()
                            .zip(self.nodes[b.0].value.data())
                            .map(|(&x, &y)| g * two * (x - y) / n)
                            .collect();
                        if self.needs(a) {
                            self.accum(a, &d);
                        }
                        if self.needs(b) {
                            let neg: Vec<E> = d.iter().map(|&v| -v).collect();
                            self.accum(b, &neg);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn accum(&mut self, target: NodeId, delta: &[E]) {
        if !self.needs(target) {
            return;
        }
        let node = &mut self.nodes[target.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, &d) in g.iter_mut().zip(delta) {
                    *gi = *gi + d;
                }
            }
            None => node.grad = Some(delta.to_vec()),
        }
    }

    fn bw_matmul(&mut self, out: usize, a: NodeId, b: NodeId, grad: &[E]) {
        let ashape = self.nodes[a.0].value.shape().to_vec();
        let nd = ashape.len();
        let (m, k) = (ashape[nd - 2], ashape[nd - 1]);
        let n = *self.nodes[out].value.shape().last().unwrap();
        let batch: usize = ashape[..nd - 2].iter().product();
        if self.needs(a) {
            // dA = dC · Bᵀ
            let bd = self.nodes[b.0].value.data();
            let mut da = vec![E::zero(); batch * m * k];
            for bi in 0..batch {
                mm_nt(&grad[bi * m * n..(bi + 1) * m * n], &bd[bi * k * n..(bi + 1) * k * n], &mut da[bi * m * k..(bi + 1) * m * k], m, n, k);
            }
            self.accum(a, &da);
        }
        if self.needs(b) {
            // dB = Aᵀ · dC
            let ad = self.nodes[a.0].value.data();
            let mut db = vec![E::zero(); batch * k * n];
            for bi in 0..batch {
                mm_tn(&ad[bi * m * k..(bi + 1) * m * k], &grad[bi * m * n..(bi + 1) * m * n], &mut db[bi * k * n..(bi + 1) * k * n], m, k, n);
            }
            self.accum(b, &db);
        }
    }

    fn bw_concat(&mut self, out: usize, inputs: &[NodeId], axis: usize, grad: &[E]) {
        let out_shape = self.nodes[out].value.shape().to_vec();
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let row = out_shape[axis] * inner;
        let mut offset = 0usize;
        for &id in inputs {
            let s_axis = self.nodes[id.0].value.shape()[axis];
            if self.needs(id) {
                let mut d = vec![E::zero(); self.nodes[id.0].value.numel()];
                for o in 0..outer {
                    let src_start = o * row + offset * inner;
                    let dst_start = o * s_axis * inner;
                    d[dst_start..dst_start + s_axis * inner]
                        .copy_from_slice(&grad[src_start..src_start + s_axis * inner]);
                }
                self.accum(id, &d);
            }
            offset += s_axis;
        }
    }

    fn bw_mean(&mut self, out: usize, a: NodeId, axes: &[usize], grad: &[E]) {
        if !self.needs(a) {
            return;
        }
        let shape = self.nodes[a.0].value.shape().to_vec();
        let out_shape = self.nodes[out].value.shape().to_vec();
        let count: usize = axes.iter().map(|&d| shape[d]).product();
        let inv = E::one() / scalar::<E>(count as f64);
        let in_strides = strides(&shape);
        let out_strides = strides(&out_shape);
        let mut d = vec![E::zero(); self.nodes[a.0].value.numel()];
        for (flat, slot) in d.iter_mut().enumerate() {
            let mut rem = flat;
            let mut of = 0;
            let mut od = 0;
            for dim in 0..shape.len() {
                let c = rem / in_strides[dim];
                rem %= in_strides[dim];
                if !axes.contains(&dim) {
                    of += c * out_strides[od];
                    od += 1;
                }
            }
            *slot = grad[of] * inv;
        }
        self.accum(a, &d);
    }

    fn bw_layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: E, grad: &[E]) {
        let shape = self.nodes[x.0].value.shape().to_vec();
        let d = *shape.last().unwrap();
        let rows = self.nodes[x.0].value.numel() / d;
        let inv_d = E::one() / scalar::<E>(d as f64);
        let src = self.nodes[x.0].value.data().to_vec();
        let gd = self.nodes[gamma.0].value.data().to_vec();

        let mut dx = vec![E::zero(); src.len()];
        let mut dgamma = vec![E::zero(); d];
        let mut dbeta = vec![E::zero(); d];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let g = &grad[r * d..(r + 1) * d];
            let mut mu = E::zero();
            for &v in row {
                mu = mu + v;
            }
            mu = mu * inv_d;
            let mut var = E::zero();
            for &v in row {
                var = var + (v - mu) * (v - mu);
            }
            var = var * inv_d;
            let inv_s = E::one() / (var + eps).sqrt();

            // xhat and the two row means needed for dx
            let mut mean_dxhat = E::zero();
            let mut mean_dxhat_xhat = E::zero();
            for j in 0..d {
                let xhat = (row[j] - mu) * inv_s;
                let dxhat = g[j] * gd[j];
                dgamma[j] = dgamma[j] + g[j] * xhat;
                dbeta[j] = dbeta[j] + g[j];
                mean_dxhat = mean_dxhat + dxhat;
                mean_dxhat_xhat = mean_dxhat_xhat + dxhat * xhat;
            }
            mean_dxhat = mean_dxhat * inv_d;
            mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
            for j in 0..d {
                let xhat = (row[j] - mu) * inv_s;
                let dxhat = g[j] * gd[j];
                dx[r * d + j] = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_s;
            }
        }
        self.accum(x, &dx);
        self.accum(gamma, &dgamma);
        self.accum(beta, &dbeta);
    }
}

fn gelu_fwd<E: Element>(x: E) -> E {
    let c: E = scalar((2.0 / std::f64::consts::PI).sqrt());
    let k: E = scalar(0.044715);
    let half: E = scalar(0.5);
    half * x * (E::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_bwd<E: Element>(x: E) -> E {
    let c: E = scalar((2.0 / std::f64::consts::PI).sqrt());
    let k: E = scalar(0.044715);
    let half: E = scalar(0.5);
    let three: E = scalar(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = E::one() - t * t;
    half * (E::one() + t) + half * x * sech2 * c * (E::one() + three * k * x * x)
}

// ── finite differences ──────────────────────────────────────────────────

/// Compare analytic gradients of a scalar-valued tensor program against
/// central finite differences with step `h`.
///
/// Returns the maximum over all input coordinates of
/// `|analytic - central| / (|analytic| + 1e-12)`.
pub fn finite_diff_check<E, F>(f: &F, points: &[Tensor<E>], h: f64) -> Result<f64>
where
    E: Element,
    F: Fn(&mut Graph<E>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = points.iter().map(|p| g.leaf(p.clone(), true)).collect();
    let loss = f(&mut g, &ids)?;
    if g.value(loss).numel() != 1 {
        return Err(Error::NonScalarLoss(g.value(loss).shape().to_vec()));
    }
    g.backward(loss)?;
    let analytic: Vec<Vec<E>> = ids
        .iter()
        .map(|&id| g.grad(id).map(|s| s.to_vec()).unwrap_or_else(|| vec![E::zero(); g.value(id).numel()]))
        .collect();

    let eval = |pts: &[Tensor<E>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = pts.iter().map(|p| g.leaf(p.clone(), false)).collect();
        let loss = f(&mut g, &ids)?;
        Ok(g.value(loss).item()?.to_f64().unwrap())
    };

    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor<E>> = points.to_vec();
    for (pi, point) in points.iter().enumerate() {
        for ci in 0..point.numel() {
            let orig = point.data()[ci].to_f64().unwrap();
            work[pi].data_mut()[ci] = scalar(orig + h);
            let plus = eval(&work)?;
            work[pi].data_mut()[ci] = scalar(orig - h);
            let minus = eval(&work)?;
            work[pi].data_mut()[ci] = scalar(orig);
            let fd = (plus - minus) / (2.0 * h);
            let an = analytic[pi][ci].to_f64().unwrap();
            let rel = (an - fd).abs() / (an.abs() + 1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
