use rand::Rng;

use super::tensor::{strides, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary { kind: BinaryKind, a: NodeId, b: NodeId },
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    Powf(NodeId, f64),
    ClampMin(NodeId, f64),
    Exp(NodeId),
    Log(NodeId),
    MatMul(NodeId, NodeId),
    Softmax { x: NodeId, axis: usize },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, xhat: Vec<f64>, inv_std: Vec<f64> },
    ReGlu(NodeId),
    Dropout { x: NodeId, mask: Vec<f64> },
    Sum(NodeId),
    Mean(NodeId),
    SumAxis { x: NodeId, axis: usize },
    Reshape(NodeId),
    Permute { x: NodeId, axes: Vec<usize> },
    Concat { inputs: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize },
    Pick { x: NodeId, index: Vec<usize> },
    SqDist(NodeId, NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of a computation for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every op's inputs precede it.
/// A tape supports exactly one [`Tape::backward`] call; build a new tape for
/// each forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`NodeId`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of a parameter node. Parameters always have a buffer after
    /// `backward`, zero-filled when unreachable from the loss.
    pub fn wrt(&self, id: NodeId) -> &Tensor {
        self.get(id).expect("no gradient recorded for node; was it created with Tape::param?")
    }
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

    /// Records a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ----- elementwise ---------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Mul, a, b)
    }

    fn binary(&mut self, kind: BinaryKind, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let out_shape = broadcast_shapes(av.shape(), bv.shape())?;
        let ai = broadcast_index(&out_shape, av.shape());
        let bi = broadcast_index(&out_shape, bv.shape());
        let n: usize = out_shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let f = match kind {
            BinaryKind::Add => |x: f64, y: f64| x + y,
            BinaryKind::Sub => |x: f64, y: f64| x - y,
            BinaryKind::Mul => |x: f64, y: f64| x * y,
        };
        let data = (0..n).map(|i| f(ad[ai.at(i)], bd[bi.at(i)])).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Binary { kind, a, b }, rg))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(v, Op::AddScalar(x), rg)
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(v, Op::MulScalar(x, c), rg)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.mul_scalar(x, -1.0)
    }

    /// `x^e` for nonnegative `x`.
    pub fn powf(&mut self, x: NodeId, e: f64) -> NodeId {
        let v = self.value(x).map(|v| v.powf(e));
        let rg = self.rg(x);
        self.push(v, Op::Powf(x, e), rg)
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: NodeId, floor: f64) -> NodeId {
        let v = self.value(x).map(|v| v.max(floor));
        let rg = self.rg(x);
        self.push(v, Op::ClampMin(x, floor), rg)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::exp);
        let rg = self.rg(x);
        self.push(v, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::ln);
        let rg = self.rg(x);
        self.push(v, Op::Log(x), rg)
    }

    // ----- linear algebra ------------------------------------------------

    /// Batched matrix product `[.., i, k] x [.., k, j] -> [.., i, j]`; batch
    /// dimensions broadcast.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let plan = MatMulPlan::new(self.value(a).shape(), self.value(b).shape())?;
        let mut out = vec![0.0; plan.out_len()];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        if plan.shared_rhs {
            // `[.., m, k] x [k, n]` is one `[batch * m, k] x [k, n]` product
            gemm_nn(ad, bd, &mut out, plan.offsets.len() * plan.m, plan.k, plan.n);
        }
        for (batch, (ao, bo)) in plan.offsets.iter().enumerate().filter(|_| !plan.shared_rhs) {
            let co = batch * plan.m * plan.n;
            gemm_nn(
                &ad[*ao..*ao + plan.m * plan.k],
                &bd[*bo..*bo + plan.k * plan.n],
                &mut out[co..co + plan.m * plan.n],
                plan.m,
                plan.k,
                plan.n,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(plan.out_shape.clone(), out)?, Op::MatMul(a, b), rg))
    }

    /// Swaps the two trailing axes.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let nd = self.value(x).ndim();
        if nd < 2 {
            return Err(Error::shape("transpose needs at least two axes"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(x, &axes)
    }

    pub fn permute(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape(format!("invalid permutation {axes:?} for shape {shape:?}")));
        }
        let (out_shape, data) = permute_data(self.value(x).data(), &shape, axes);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Permute { x, axes: axes.to_vec() }, rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    // ----- normalisation & activations -------------------------------------

    /// Softmax along `axis`, computed with the per-slice maximum subtracted.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let (outer, len, inner) = axis_split(xv.shape(), axis)?;
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let max = (0..len).map(|k| src[base + k * inner]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (src[base + k * inner] - max).exp();
                    out[base + k * inner] = e;
                    total += e;
                }
                for k in 0..len {
                    out[base + k * inner] /= total;
                }
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Layer normalisation over the last axis with learnable gain and bias
    /// (both shaped like the last axis). Uses the population variance.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        if eps <= 0.0 {
            return Err(Error::config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let xv = self.value(x);
        let d = *xv.shape().last().ok_or_else(|| Error::shape("layer_norm on a scalar"))?;
        for p in [gain, bias] {
            if self.value(p).shape() != [d] {
                return Err(Error::shape(format!(
                    "layer_norm parameter shape {:?} does not match last axis {d}",
                    self.value(p).shape()
                )));
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.len() / d;
        let src = xv.data();
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let s = &src[r * d..(r + 1) * d];
            let mean = s.iter().sum::<f64>() / d as f64;
            let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (s[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// Gated linear unit with ReLU gate: last axis `2h` is split into
    /// `[value, gate]` and the output is `value * relu(gate)`.
    pub fn reglu(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let last = *xv.shape().last().ok_or_else(|| Error::shape("reglu on a scalar"))?;
        if last % 2 != 0 {
            return Err(Error::shape(format!("reglu needs an even last axis, got {last}")));
        }
        let h = last / 2;
        let rows = xv.len() / last;
        let src = xv.data();
        let mut out = Vec::with_capacity(rows * h);
        for r in 0..rows {
            let s = &src[r * last..(r + 1) * last];
            out.extend((0..h).map(|j| s[j] * s[h + j].max(0.0)));
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = h;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::ReGlu(x), rg))
    }

    /// Inverted dropout. Returns `x` unchanged when not training or when
    /// `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, rate: f64, training: bool, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Dropout { x, mask }, rg))
    }

    // ----- reductions & indexing -------------------------------------------

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let m = v.sum() / v.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), rg))
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let (outer, len, inner) = axis_split(xv.shape(), axis)?;
        let src = xv.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let row = &src[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::SumAxis { x, axis }, rg))
    }

    /// Averages over `axis`, removing it.
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let len = *self
            .value(x)
            .shape()
            .get(axis)
            .ok_or_else(|| Error::shape(format!("axis {axis} out of range")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.mul_scalar(s, 1.0 / len as f64))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = inputs.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &id in inputs {
            let s = self.value(id).shape();
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(format!("cannot concat {:?} with {:?} along axis {axis}", base, s)));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &id in inputs {
                let v = self.value(id);
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&id| self.rg(id));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let (outer, full, inner) = axis_split(xv.shape(), axis)?;
        if start + len > full {
            return Err(Error::shape(format!("slice {start}..{} exceeds axis length {full}", start + len)));
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&xv.data()[from..from + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { x, axis, start }, rg))
    }

    /// Selects `x[i, index[i]]` from a 2-d tensor, giving a vector.
    pub fn pick(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.ndim() != 2 || xv.shape()[0] != index.len() {
            return Err(Error::shape(format!("pick of {} indices from shape {:?}", index.len(), xv.shape())));
        }
        let c = xv.shape()[1];
        if let Some(bad) = index.iter().find(|&&j| j >= c) {
            return Err(Error::shape(format!("pick index {bad} out of range for {c} columns")));
        }
        let data = index.iter().enumerate().map(|(i, &j)| xv.data()[i * c + j]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![index.len()], data)?, Op::Pick { x, index: index.to_vec() }, rg))
    }

    /// Pairwise squared Euclidean distances between rows of `a: [n, d]` and
    /// `b: [m, d]`, giving `[n, m]`.
    pub fn sq_dist(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[1] {
            return Err(Error::shape(format!(
                "sq_dist needs [n, d] and [m, d], got {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (n, m) = (av.shape()[0], bv.shape()[0]);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                out.push(av.row(i).iter().zip(bv.row(j)).map(|(x, y)| (x - y) * (x - y)).sum());
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::SqDist(a, b), rg))
    }

    // ----- reverse pass ------------------------------------------------------

    /// Back-propagates from a scalar `loss`. May be called once per tape.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::contract("backward already ran on this tape; record a new forward pass"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.rg(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (g, &node.op, node.requires_grad) {
                (Some(g), _, _) => Some(Tensor::new(node.value.shape().to_vec(), g).expect("gradient shape")),
                (None, Op::Leaf, true) => Some(Tensor::zeros(node.value.shape().to_vec())),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b } => {
                let out_shape = node.value.shape();
                let (av, bv) = (self.value(*a), self.value(*b));
                let ai = broadcast_index(out_shape, av.shape());
                let bi = broadcast_index(out_shape, bv.shape());
                if self.rg(*a) {
                    let ga = self.grad_buf(grads, *a);
                    for (i, gi) in g.iter().enumerate() {
                        ga[ai.at(i)] += match kind {
                            BinaryKind::Add | BinaryKind::Sub => *gi,
                            BinaryKind::Mul => gi * bv.data()[bi.at(i)],
                        };
                    }
                }
                if self.rg(*b) {
                    let gb = self.grad_buf(grads, *b);
                    for (i, gi) in g.iter().enumerate() {
                        gb[bi.at(i)] += match kind {
                            BinaryKind::Add => *gi,
                            BinaryKind::Sub => -gi,
                            BinaryKind::Mul => gi * av.data()[ai.at(i)],
                        };
                    }
                }
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.iter().copied()),
            Op::MulScalar(x, c) => self.accumulate(grads, *x, g.iter().map(|gi| gi * c)),
            Op::Powf(x, e) => {
                let xd = self.value(*x).data();
                let e = *e;
                self.accumulate(
                    grads,
                    *x,
                    g.iter().zip(xd).map(|(gi, &v)| if e == 0.0 { 0.0 } else { gi * e * v.powf(e - 1.0) }),
                );
            }
            Op::ClampMin(x, floor) => {
                let xd = self.value(*x).data();
                self.accumulate(grads, *x, g.iter().zip(xd).map(|(gi, &v)| if v > *floor { *gi } else { 0.0 }));
            }
            Op::Exp(x) => self.accumulate(grads, *x, g.iter().zip(out).map(|(gi, o)| gi * o)),
            Op::Log(x) => {
                let xd = self.value(*x).data();
                self.accumulate(grads, *x, g.iter().zip(xd).map(|(gi, v)| gi / v));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let plan = MatMulPlan::new(av.shape(), bv.shape()).expect("validated in forward");
                let (m, k, n) = (plan.m, plan.k, plan.n);
                if plan.shared_rhs {
                    let rows = plan.offsets.len() * m;
                    if self.rg(*a) {
                        gemm_nt(g, bv.data(), self.grad_buf(grads, *a), rows, n, k);
                    }
                    if self.rg(*b) {
                        gemm_tn(av.data(), g, self.grad_buf(grads, *b), rows, k, n);
                    }
                    return;
                }
                if self.rg(*a) {
                    let ga = self.grad_buf(grads, *a);
                    for (batch, (ao, bo)) in plan.offsets.iter().enumerate() {
                        let go = batch * m * n;
                        gemm_nt(&g[go..go + m * n], &bv.data()[*bo..*bo + k * n], &mut ga[*ao..*ao + m * k], m, n, k);
                    }
                }
                if self.rg(*b) {
                    let gb = self.grad_buf(grads, *b);
                    for (batch, (ao, bo)) in plan.offsets.iter().enumerate() {
                        let go = batch * m * n;
                        gemm_tn(&av.data()[*ao..*ao + m * k], &g[go..go + m * n], &mut gb[*bo..*bo + k * n], m, k, n);
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(node.value.shape(), *axis).expect("validated in forward");
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len).map(|k| g[base + k * inner] * out[base + k * inner]).sum();
                        for k in 0..len {
                            let p = base + k * inner;
                            dx[p] = out[p] * (g[p] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, dx.into_iter());
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let d = *node.value.shape().last().unwrap();
                let gv = self.value(*gain).data();
                let rows = inv_std.len();
                if self.rg(*gain) {
                    let gg = self.grad_buf(grads, *gain);
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if self.rg(*bias) {
                    let gb = self.grad_buf(grads, *bias);
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
                if self.rg(*x) {
                    let gx = self.grad_buf(grads, *x);
                    let df = d as f64;
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for j in 0..d {
                            dxhat[j] = g[r * d + j] * gv[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xhat[r * d + j];
                        }
                        for j in 0..d {
                            gx[r * d + j] += inv_std[r] / df * (df * dxhat[j] - s1 - xhat[r * d + j] * s2);
                        }
                    }
                }
            }
            Op::ReGlu(x) => {
                let xd = self.value(*x).data();
                let h = *node.value.shape().last().unwrap();
                let rows = g.len() / h;
                let gx = self.grad_buf(grads, *x);
                for r in 0..rows {
                    let s = &xd[r * 2 * h..(r + 1) * 2 * h];
                    for j in 0..h {
                        let gi = g[r * h + j];
                        let (value, gate) = (s[j], s[h + j]);
                        gx[r * 2 * h + j] += gi * gate.max(0.0);
                        if gate > 0.0 {
                            gx[r * 2 * h + h + j] += gi * value;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => self.accumulate(grads, *x, g.iter().zip(mask).map(|(gi, m)| gi * m)),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, std::iter::repeat_n(g[0], n));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, std::iter::repeat_n(g[0] / n as f64, n));
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = axis_split(self.value(*x).shape(), *axis).expect("validated in forward");
                let gx = self.grad_buf(grads, *x);
                for o in 0..outer {
                    for k in 0..len {
                        let dst = &mut gx[(o * len + k) * inner..(o * len + k + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.iter().copied()),
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (_, back) = permute_data(g, node.value.shape(), &inverse);
                self.accumulate(grads, *x, back.into_iter());
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &id in inputs {
                    let chunk = self.value(id).shape()[*axis] * inner;
                    if self.rg(id) {
                        let gi = self.grad_buf(grads, id);
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + chunk];
                            for (d, s) in gi[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, full, inner) = axis_split(self.value(*x).shape(), *axis).expect("validated in forward");
                let len = node.value.shape()[*axis];
                let gx = self.grad_buf(grads, *x);
                for o in 0..outer {
                    let from = (o * full + start) * inner;
                    for (d, s) in gx[from..from + len * inner].iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                        *d += s;
                    }
                }
            }
            Op::Pick { x, index } => {
                let c = self.value(*x).shape()[1];
                let gx = self.grad_buf(grads, *x);
                for (i, &j) in index.iter().enumerate() {
                    gx[i * c + j] += g[i];
                }
            }
            Op::SqDist(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, m, d) = (av.shape()[0], bv.shape()[0], av.shape()[1]);
                if self.rg(*a) {
                    let ga = self.grad_buf(grads, *a);
                    for i in 0..n {
                        for j in 0..m {
                            let w = 2.0 * g[i * m + j];
                            for t in 0..d {
                                ga[i * d + t] += w * (av.row(i)[t] - bv.row(j)[t]);
                            }
                        }
                    }
                }
                if self.rg(*b) {
                    let gb = self.grad_buf(grads, *b);
                    for i in 0..n {
                        for j in 0..m {
                            let w = 2.0 * g[i * m + j];
                            for t in 0..d {
                                gb[j * d + t] -= w * (av.row(i)[t] - bv.row(j)[t]);
                            }
                        }
                    }
                }
            }
        }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> &'g mut Vec<f64> {
        let n = self.value(id).len();
        grads[id.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, delta: impl Iterator<Item = f64>) {
        if !self.rg(id) {
            return;
        }
        let buf = self.grad_buf(grads, id);
        for (d, v) in buf.iter_mut().zip(delta) {
            *d += v;
        }
    }
}

// ----- helpers ---------------------------------------------------------------

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(format!("cannot broadcast shapes {a:?} and {b:?}"))),
        };
    }
    Ok(out)
}

/// Maps flat output positions to flat input positions under broadcasting.
enum BroadcastIndex {
    Identity,
    /// Input shape is a suffix of the output shape.
    Modulo(usize),
    Table(Vec<usize>),
}

impl BroadcastIndex {
    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            BroadcastIndex::Identity => i,
            BroadcastIndex::Modulo(n) => i % n,
            BroadcastIndex::Table(t) => t[i],
        }
    }
}

fn broadcast_index(out_shape: &[usize], in_shape: &[usize]) -> BroadcastIndex {
    if out_shape == in_shape {
        return BroadcastIndex::Identity;
    }
    let nd = out_shape.len();
    let off = nd - in_shape.len();
    if out_shape[off..] == *in_shape {
        return BroadcastIndex::Modulo(in_shape.iter().product::<usize>().max(1));
    }
    let in_strides = strides(in_shape);
    let eff: Vec<usize> = (0..nd)
        .map(|i| if i < off || in_shape[i - off] == 1 { 0 } else { in_strides[i - off] })
        .collect();
    let total: usize = out_shape.iter().product();
    let mut table = Vec::with_capacity(total);
    let mut idx = vec![0; nd];
    for _ in 0..total {
        table.push(idx.iter().zip(&eff).map(|(i, s)| i * s).sum());
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    BroadcastIndex::Table(table)
}

fn permute_data(src: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let nd = shape.len();
    let mut out = Vec::with_capacity(src.len());
    if nd == 0 {
        return (out_shape, src.to_vec());
    }
    // Innermost axis handled in a tight loop.
    let last_len = out_shape[nd - 1];
    let last_stride = src_strides[nd - 1];
    let outer: usize = out_shape[..nd - 1].iter().product();
    let mut idx = vec![0; nd - 1];
    for _ in 0..outer {
        let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.extend((0..last_len).map(|k| src[base + k * last_stride]));
        for d in (0..nd - 1).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

struct MatMulPlan {
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
    /// Per output batch: offsets into `a` and `b`.
    offsets: Vec<(usize, usize)>,
    /// `b` is a single matrix applied to every batch of `a`.
    shared_rhs: bool,
}

impl MatMulPlan {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let mismatch = || Error::shape(format!("matmul shapes {a:?} and {b:?} are incompatible"));
        if a.len() < 2 || b.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let (ab, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
        let batch = broadcast_shapes(ab, bb).map_err(|_| mismatch())?;
        let total: usize = batch.iter().product();
        let ai = broadcast_index(&batch, ab);
        let bi = broadcast_index(&batch, bb);
        let offsets = (0..total).map(|i| (ai.at(i) * m * k, bi.at(i) * k * n)).collect();
        let shared_rhs = bb.is_empty() && batch.as_slice() == ab;
        let mut out_shape = batch;
        out_shape.extend([m, n]);
        Ok(Self { m, k, n, out_shape, offsets, shared_rhs })
    }

    fn out_len(&self) -> usize {
        self.offsets.len() * self.m * self.n
    }
}

/// `c[m, n] += a[m, k] * b[k, n]`
fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    if m == 0 || n == 0 {
        return;
    }
    // four rows of `c` per pass so each row of `b` is loaded once per block
    let mut blocks = c[..m * n].chunks_exact_mut(4 * n);
    for (blk, cblk) in (&mut blocks).enumerate() {
        let i = blk * 4;
        let (c0, rest) = cblk.split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..k {
            let (a0, a1, a2, a3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bj = brow[j];
                c0[j] += a0 * bj;
                c1[j] += a1 * bj;
                c2[j] += a2 * bj;
                c3[j] += a3 * bj;
            }
        }
    }
    let done = m - m % 4;
    for (r, crow) in blocks.into_remainder().chunks_exact_mut(n).enumerate() {
        let i = done + r;
        for p in 0..k {
            let av = a[i * k + p];
            for (cj, bj) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cj += av * bj;
            }
        }
    }
}

/// `c[m, k] += g[m, n] * b[k, n]^T`
fn gemm_nt(g: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    let mut bt = vec![0.0; n * k];
    for p in 0..k {
        for j in 0..n {
            bt[j * k + p] = b[p * n + j];
        }
    }
    gemm_nn(g, &bt, c, m, n, k);
}

/// `c[k, n] += a[m, k]^T * g[m, n]`
fn gemm_tn(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (cj, gj) in c[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *cj += av * gj;
            }
        }
    }
}
