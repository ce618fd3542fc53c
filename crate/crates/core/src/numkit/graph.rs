//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is topologically sorted
//! by construction and `backward` is a single reverse sweep.

use std::collections::BTreeMap;

use super::kernels;
use super::tensor::{axis_split, Tensor};
use crate::error::{Error, Result};
use crate::par::Exec;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `x + b` with `b` broadcast over the leading axes of `x`.
    AddBroadcast(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Exp(NodeId),
    Square(NodeId),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax {
        x: NodeId,
        axis: usize,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: Vec<f64>,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Reshape(NodeId),
    SumAll(NodeId),
    L1Mean(NodeId, NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug)]
struct ParamSlot {
    name: String,
    node: NodeId,
    grad: Tensor,
}

/// A single forward computation plus its gradient buffers.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<ParamSlot>,
    by_name: BTreeMap<String, usize>,
    exec: Exec,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn with_exec(exec: Exec) -> Self {
        Graph {
            exec,
            ..Graph::default()
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Non-trainable leaf.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    /// Trainable leaf. Names are unique per graph.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Result<NodeId> {
        if self.by_name.contains_key(name) {
            return Err(Error::contract(format!("parameter `{name}` registered twice")));
        }
        let slot = self.params.len();
        let node = self.push(Op::Param(slot), t.clone());
        self.params.push(ParamSlot {
            name: name.to_string(),
            node,
            grad: Tensor::zeros(t.shape()),
        });
        self.by_name.insert(name.to_string(), slot);
        Ok(node)
    }

    pub fn param_node(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).map(|&s| self.params[s].node)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name).map(|&s| &self.params[s].grad)
    }

    /// Accumulated parameter gradients keyed by name.
    pub fn gradients(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.grad.clone()))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn unary(&mut self, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v = &self.nodes[x.0].value;
        let data = v.data().iter().map(|&a| f(a)).collect();
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(op, out)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push(op, out)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul: cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(
            self.exec,
            self.value(a).data(),
            self.value(b).data(),
            m,
            k,
            n,
        );
        Ok(self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], data)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        Ok(self.binary(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        Ok(self.binary(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        Ok(self.binary(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds `b` to every trailing block of `x` whose shape equals `b`'s.
    pub fn add_broadcast(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != *sb {
            return Err(Error::dim(format!("add_broadcast: {sb:?} does not trail {sx:?}")));
        }
        let vb = self.value(b).data();
        let n = vb.len();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + vb[i % n])
            .collect();
        let out = Tensor::from_parts(sx.to_vec(), data);
        Ok(self.push(Op::AddBroadcast(x, b), out))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, Op::Scale(x, c), |a| a * c)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, Op::AddScalar(x), |a| a + c)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Square(x), |a| a * a)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Gelu(x), |a| {
            0.5 * a * (1.0 + (SQRT_2_OVER_PI * (a + GELU_C * a * a * a)).tanh())
        })
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let d = self.value(x).last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(format!(
                "layer_norm: affine params {:?}/{:?} do not match width {d}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xv = self.value(x);
        let rows = xv.len() / d;
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            out,
        ))
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax: axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for j in 0..inner {
                kernels::softmax_lane(&mut data, o * n * inner + j, n, inner);
            }
        }
        Ok(self.push(Op::Softmax { x, axis }, Tensor::from_parts(shape, data)))
    }

    /// Multi-head scaled dot-product self-attention on `[batch, tokens, width]`
    /// projections. Heads split the width into contiguous slices.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> Result<NodeId> {
        let shape = self.shape(q).to_vec();
        if shape.len() != 3 || self.shape(k) != shape || self.shape(v) != shape {
            return Err(Error::dim(format!(
                "attention: q/k/v must share a [batch, tokens, width] shape, got {:?}/{:?}/{:?}",
                shape,
                self.shape(k),
                self.shape(v)
            )));
        }
        let (b, t, w) = (shape[0], shape[1], shape[2]);
        if heads == 0 || w % heads != 0 {
            return Err(Error::dim(format!("attention: width {w} not divisible by {heads} heads")));
        }
        let dh = w / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());

        // Per-batch work: probs [heads, t, t] and output [t, w].
        let per_batch = self.exec.map_range(b, |bi| {
            let base = bi * t * w;
            let mut probs = vec![0.0; heads * t * t];
            let mut out = vec![0.0; t * w];
            for h in 0..heads {
                let off = h * dh;
                let p = &mut probs[h * t * t..(h + 1) * t * t];
                for i in 0..t {
                    for j in 0..t {
                        let mut s = 0.0;
                        for c in 0..dh {
                            s += qv[base + i * w + off + c] * kv[base + j * w + off + c];
                        }
                        p[i * t + j] = s * scale;
                    }
                    kernels::softmax_lane(p, i * t, t, 1);
                }
                for i in 0..t {
                    for j in 0..t {
                        let pij = p[i * t + j];
                        for c in 0..dh {
                            out[i * w + off + c] += pij * vv[base + j * w + off + c];
                        }
                    }
                }
            }
            (probs, out)
        });
        let mut probs = Vec::with_capacity(b * heads * t * t);
        let mut out = Vec::with_capacity(b * t * w);
        for (p, o) in per_batch {
            probs.extend(p);
            out.extend(o);
        }
        Ok(self.push(
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            Tensor::from_parts(shape, out),
        ))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat: no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!("concat: axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!("concat: {s:?} incompatible with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis];
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
        }
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            Tensor::from_parts(shape, data),
        ))
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(format!(
                "slice: [{start}, {}) out of range on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            data.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(
            Op::Slice { x, axis, start },
            Tensor::from_parts(out_shape, data),
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.push(Op::Reshape(x), t))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        self.push(Op::SumAll(x), Tensor::scalar(s))
    }

    /// Mean absolute difference over all elements.
    pub fn l1_mean(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "l1_mean")?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let s: f64 = va.iter().zip(vb).map(|(x, y)| (x - y).abs()).sum();
        let n = va.len() as f64;
        Ok(self.push(Op::L1Mean(a, b), Tensor::scalar(s / n)))
    }

    /// Reverse sweep from a scalar node, accumulating into parameter gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let exec = self.exec;
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
            match &mut grads[id.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(slot) => {
                    let slot = *slot;
                    let pg = self.params[slot].grad.data_mut();
                    pg.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                    let ga = kernels::matmul_bt(exec, &g, vb.data(), m, n, k);
                    let gb = kernels::matmul_at(exec, va.data(), &g, m, k, n);
                    let (a, b) = (*a, *b);
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    let neg = g.iter().map(|v| -v).collect();
                    acc(&mut grads, a, g);
                    acc(&mut grads, b, neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    let ga = g.iter().zip(vb).map(|(g, y)| g * y).collect();
                    let gb = g.iter().zip(va).map(|(g, x)| g * x).collect();
                    let (a, b) = (*a, *b);
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::AddBroadcast(x, b) => {
                    let n = self.nodes[b.0].value.len();
                    let mut gb = vec![0.0; n];
                    for (i, v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                    let (x, b) = (*x, *b);
                    acc(&mut grads, x, g);
                    acc(&mut grads, b, gb);
                }
                Op::Scale(x, c) => {
                    let (x, c) = (*x, *c);
                    acc(&mut grads, x, g.iter().map(|v| v * c).collect());
                }
                Op::AddScalar(x) => {
                    let x = *x;
                    acc(&mut grads, x, g);
                }
                Op::Exp(x) => {
                    let gx = g.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                    let x = *x;
                    acc(&mut grads, x, gx);
                }
                Op::Square(x) => {
                    let vx = self.nodes[x.0].value.data();
                    let gx = g.iter().zip(vx).map(|(g, a)| 2.0 * g * a).collect();
                    let x = *x;
                    acc(&mut grads, x, gx);
                }
                Op::Gelu(x) => {
                    let vx = self.nodes[x.0].value.data();
                    let gx = g
                        .iter()
                        .zip(vx)
                        .map(|(g, &a)| {
                            let u = SQRT_2_OVER_PI * (a + GELU_C * a * a * a);
                            let th = u.tanh();
                            let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * a * a);
                            g * (0.5 * (1.0 + th) + 0.5 * a * (1.0 - th * th) * du)
                        })
                        .collect();
                    let x = *x;
                    acc(&mut grads, x, gx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.nodes[gamma.0].value.data();
                    let d = gv.len();
                    let rows = g.len() / d;
                    let mut gx = vec![0.0; g.len()];
                    let mut gg = vec![0.0; d];
                    let mut gb = vec![0.0; d];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                            gg[j] += gr[j] * hr[j];
                            gb[j] += gr[j];
                        }
                        let scale = inv_std[r] / d as f64;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            gx[r * d + j] = scale * (d as f64 * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    acc(&mut grads, x, gx);
                    acc(&mut grads, gamma, gg);
                    acc(&mut grads, beta, gb);
                }
                Op::Softmax { x, axis } => {
                    let (outer, n, inner) = axis_split(out.shape(), *axis);
                    let y = out.data();
                    let mut gx = vec![0.0; g.len()];
                    for o in 0..outer {
                        for j in 0..inner {
                            let base = o * n * inner + j;
                            let dot: f64 = (0..n)
                                .map(|i| g[base + i * inner] * y[base + i * inner])
                                .sum();
                            for i in 0..n {
                                let at = base + i * inner;
                                gx[at] = y[at] * (g[at] - dot);
                            }
                        }
                    }
                    let x = *x;
                    acc(&mut grads, x, gx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let shape = out.shape();
                    let (b, t, w) = (shape[0], shape[1], shape[2]);
                    let heads = *heads;
                    let dh = w / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let qv = self.nodes[q.0].value.data();
                    let kv = self.nodes[k.0].value.data();
                    let vv = self.nodes[v.0].value.data();
                    let per_batch = exec.map_range(b, |bi| {
                        let base = bi * t * w;
                        let mut gq = vec![0.0; t * w];
                        let mut gk = vec![0.0; t * w];
                        let mut gvv = vec![0.0; t * w];
                        let mut dp = vec![0.0; t * t];
                        for h in 0..heads {
                            let off = h * dh;
                            let p = &probs[(bi * heads + h) * t * t..(bi * heads + h + 1) * t * t];
                            // dP = dO Vᵀ, dV = Pᵀ dO
                            for i in 0..t {
                                for j in 0..t {
                                    let mut s = 0.0;
                                    for c in 0..dh {
                                        let go = g[base + i * w + off + c];
                                        s += go * vv[base + j * w + off + c];
                                        gvv[j * w + off + c] += p[i * t + j] * go;
                                    }
                                    dp[i * t + j] = s;
                                }
                            }
                            // dS = P ⊙ (dP − rowsum(dP ⊙ P))
                            for i in 0..t {
                                let dot: f64 = (0..t).map(|j| dp[i * t + j] * p[i * t + j]).sum();
                                for j in 0..t {
                                    let ds = p[i * t + j] * (dp[i * t + j] - dot) * scale;
                                    for c in 0..dh {
                                        gq[i * w + off + c] += ds * kv[base + j * w + off + c];
                                        gk[j * w + off + c] += ds * qv[base + i * w + off + c];
                                    }
                                }
                            }
                        }
                        (gq, gk, gvv)
                    });
                    let mut gq = Vec::with_capacity(b * t * w);
                    let mut gk = Vec::with_capacity(b * t * w);
                    let mut gvv = Vec::with_capacity(b * t * w);
                    for (a, bb, c) in per_batch {
                        gq.extend(a);
                        gk.extend(bb);
                        gvv.extend(c);
                    }
                    let (q, k, v) = (*q, *k, *v);
                    acc(&mut grads, q, gq);
                    acc(&mut grads, k, gk);
                    acc(&mut grads, v, gvv);
                }
                Op::Concat { parts, axis } => {
                    let (outer, total, inner) = axis_split(out.shape(), *axis);
                    let mut offset = 0;
                    let mut pieces = Vec::with_capacity(parts.len());
                    for &p in parts {
                        let n = self.nodes[p.0].value.shape()[*axis];
                        let mut gp = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[from..from + n * inner]);
                        }
                        offset += n;
                        pieces.push((p, gp));
                    }
                    for (p, gp) in pieces {
                        acc(&mut grads, p, gp);
                    }
                }
                Op::Slice { x, axis, start } => {
                    let src_shape = self.nodes[x.0].value.shape();
                    let (outer, n, inner) = axis_split(src_shape, *axis);
                    let len = out.shape()[*axis];
                    let mut gx = vec![0.0; src_shape.iter().product()];
                    for o in 0..outer {
                        let to = (o * n + start) * inner;
                        let from = o * len * inner;
                        gx[to..to + len * inner].copy_from_slice(&g[from..from + len * inner]);
                    }
                    let x = *x;
                    acc(&mut grads, x, gx);
                }
                Op::Reshape(x) => {
                    let x = *x;
                    acc(&mut grads, x, g);
                }
                Op::SumAll(x) => {
                    let n = self.nodes[x.0].value.len();
                    let x = *x;
                    acc(&mut grads, x, vec![g[0]; n]);
                }
                Op::L1Mean(a, b) => {
                    let (va, vb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    let n = va.len() as f64;
                    let ga: Vec<f64> = va
                        .iter()
                        .zip(vb)
                        .map(|(x, y)| {
                            let d = x - y;
                            if d > 0.0 {
                                g[0] / n
                            } else if d < 0.0 {
                                -g[0] / n
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let gb = ga.iter().map(|v| -v).collect();
                    let (a, b) = (*a, *b);
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
            }
        }
        Ok(())
    }
}
