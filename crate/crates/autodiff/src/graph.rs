use crate::error::{AdError, Result};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{numel, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Variance floor used by [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    MatMul(Var, Var),
    Bmm(Var, Var),
    TransposeLast(Var),
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Slice { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MeanAxis { x: Var, axis: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only tape of tensor operations.
///
/// Nodes are stored in construction order, which is a valid topological
/// order; [`Graph::backward`] walks it in exact reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(AdError::Shape(msg))
}

/// Size of the leading block, the axis, and the trailing block of `shape` around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn derived(&mut self, shape: Vec<usize>, data: Vec<f64>, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.req(v));
        let value = Tensor { shape, data, requires_grad, grad: None };
        self.push(value, op)
    }

    /// Registers a tensor as a leaf; its `requires_grad` flag is kept.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: None })
    }

    /// Registers a tensor that never receives gradients.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        t.grad = None;
        self.push(t, Op::Leaf { param: None })
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Copies a parameter into the graph as a gradient-tracking leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let src = store.get(id);
        let value = Tensor { shape: src.shape.clone(), data: src.data.clone(), requires_grad: true, grad: None };
        self.push(value, Op::Leaf { param: Some(id) })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    /// Resets accumulated leaf gradients to zero.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn broadcast_check(&self, a: Var, b: Var, name: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let nb = numel(sb);
        let suffix = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb;
        if suffix || nb == 1 {
            Ok(())
        } else {
            shape_err(format!("{name}: cannot broadcast {sb:?} onto {sa:?}"))
        }
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.broadcast_check(a, b, name)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let nb = tb.data.len().max(1);
        let mut data = Vec::with_capacity(ta.data.len());
        for chunk in ta.data.chunks(nb) {
            data.extend(chunk.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)));
        }
        let shape = ta.shape.clone();
        Ok(self.derived(shape, data, &[a, b], op))
    }

    /// Elementwise `a + b`; `b` may broadcast over leading dimensions of `a` or be a single value.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.data(b).iter().any(|&v| v == 0.0) {
            return Err(AdError::Domain("division by zero".into()));
        }
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let data = t.data.iter().map(|x| x * c).collect();
        let shape = t.shape.clone();
        self.derived(shape, data, &[a], Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let data = t.data.iter().map(|x| x + c).collect();
        let shape = t.shape.clone();
        self.derived(shape, data, &[a], Op::AddScalar(a))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data.iter().map(|&x| f(x)).collect();
        let shape = t.shape.clone();
        self.derived(shape, data, &[a], op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Natural logarithm; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.data(a).iter().find(|&&x| !(x > 0.0)) {
            return Err(AdError::Domain(format!("log of non-positive value {x}")));
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    fn rows(&self, a: Var) -> (usize, usize) {
        let t = self.value(a);
        let n = last_dim(&t.shape);
        (t.data.len() / n.max(1), n)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, n) = self.rows(a);
        let x = &self.value(a).data;
        let mut out = vec![0.0; x.len()];
        for i in 0..r {
            let row = &x[i * n..(i + 1) * n];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[i * n..(i + 1) * n];
            let mut s = 0.0;
            for (ov, &xv) in o.iter_mut().zip(row) {
                *ov = (xv - m).exp();
                s += *ov;
            }
            o.iter_mut().for_each(|v| *v /= s);
        }
        let shape = self.shape(a).to_vec();
        self.derived(shape, out, &[a], Op::Softmax(a))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (r, n) = self.rows(a);
        let x = &self.value(a).data;
        let mut out = vec![0.0; x.len()];
        for i in 0..r {
            let row = &x[i * n..(i + 1) * n];
            let lse = logsumexp(row);
            for (ov, &xv) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *ov = xv - lse;
            }
        }
        let shape = self.shape(a).to_vec();
        self.derived(shape, out, &[a], Op::LogSoftmax(a))
    }

    /// Stabilized log-sum-exp over the last axis; the axis is removed.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let (r, n) = self.rows(a);
        let x = &self.value(a).data;
        let out = (0..r).map(|i| logsumexp(&x[i * n..(i + 1) * n])).collect();
        let mut shape = self.shape(a).to_vec();
        shape.pop();
        self.derived(shape, out, &[a], Op::LogSumExp(a))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let (r, n) = self.rows(a);
        let x = &self.value(a).data;
        let mut out = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &x[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for (o, v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let shape = self.shape(a).to_vec();
        self.derived(shape, out, &[a], Op::LayerNorm { x: a, inv_std })
    }

    /// Matrix product `a · b` with `b` of rank 2. Leading dimensions of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return shape_err(format!("matmul: {sa:?} · {sb:?}"));
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(sa) / k;
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, self.data(a), self.data(b), &mut out);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.derived(shape, out, &[a, b], Op::MatMul(a, b)))
    }

    /// Batched product of `[B, m, k]` and `[B, k, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return shape_err(format!("bmm: {sa:?} · {sb:?}"));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..bs {
            gemm_nn(m, k, n, &da[i * m * k..(i + 1) * m * k], &db[i * k * n..(i + 1) * k * n], &mut out[i * m * n..(i + 1) * m * n]);
        }
        Ok(self.derived(vec![bs, m, n], out, &[a, b], Op::Bmm(a, b)))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() < 2 {
            return shape_err(format!("transpose of rank-{} tensor", s.len()));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let b = numel(s) / (r * c);
        let x = self.data(a);
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            let off = bi * r * c;
            for i in 0..r {
                for j in 0..c {
                    out[off + j * r + i] = x[off + i * c + j];
                }
            }
        }
        let mut shape = s.to_vec();
        let l = shape.len();
        shape.swap(l - 1, l - 2);
        Ok(self.derived(shape, out, &[a], Op::TransposeLast(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(a)) {
            return shape_err(format!("reshape {:?} -> {:?}", self.shape(a), shape));
        }
        let data = self.data(a).to_vec();
        Ok(self.derived(shape.to_vec(), data, &[a], Op::Reshape(a)))
    }

    /// General axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return shape_err(format!("invalid permutation {perm:?} for {s:?}"));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let idx = permute_index(&s, perm);
        let x = self.data(a);
        let data = idx.iter().map(|&i| x[i]).collect();
        Ok(self.derived(out_shape, data, &[a], Op::Permute { x: a, perm: perm.to_vec() }))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return shape_err(format!("slice axis {axis} [{start}, {}) of {s:?}", start + len));
        }
        let (outer, n, inner) = split_at_axis(&s, axis);
        let x = self.data(a);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.derived(shape, data, &[a], Op::Slice { x: a, axis, start }))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = match xs.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => return Err(AdError::Contract("concat of zero tensors".into())),
        };
        if axis >= first.len() {
            return shape_err(format!("concat axis {axis} of {first:?}"));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return shape_err(format!("concat {s:?} with {first:?}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                data.extend_from_slice(&self.data(v)[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.derived(shape, data, xs, Op::Concat { xs: xs.to_vec(), axis }))
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.derived(Vec::new(), vec![s], &[a], Op::Sum(a))
    }

    /// Mean of all entries as a rank-0 tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.data(a);
        let s = x.iter().sum::<f64>() / x.len() as f64;
        self.derived(Vec::new(), vec![s], &[a], Op::Mean(a))
    }

    /// Sum over the last axis; the axis is removed.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let (r, n) = self.rows(a);
        let x = self.data(a);
        let out = (0..r).map(|i| x[i * n..(i + 1) * n].iter().sum()).collect();
        let mut shape = self.shape(a).to_vec();
        shape.pop();
        self.derived(shape, out, &[a], Op::SumLast(a))
    }

    /// Mean over `axis`; the axis is removed.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return shape_err(format!("mean over axis {axis} of {s:?}"));
        }
        let (outer, n, inner) = split_at_axis(&s, axis);
        let x = self.data(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &x[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let mut shape = s;
        shape.remove(axis);
        Ok(self.derived(shape, out, &[a], Op::MeanAxis { x: a, axis }))
    }

    fn check_scalar(&self, loss: Var) -> Result<()> {
        if self.value(loss).data.len() != 1 {
            return Err(AdError::Contract(format!("backward from non-scalar of shape {:?}", self.shape(loss))));
        }
        Ok(())
    }

    /// Reverse pass from a scalar; leaf gradients are added to any existing ones.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let (Op::Leaf { .. }, true) = (&node.op, node.value.requires_grad) {
                match g {
                    Some(g) => node.value.accumulate_grad(&g),
                    None => {
                        node.value.grad.get_or_insert_with(|| vec![0.0; node.value.data.len()]);
                    }
                }
            }
        }
        Ok(())
    }

    /// Reverse pass from a scalar, adding parameter-leaf gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Leaf { param: Some(id) }, Some(g)) = (&node.op, g) {
                store.get_mut(*id).accumulate_grad(&g);
            }
        }
        Ok(())
    }

    fn gradients(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        self.check_scalar(loss)?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.req(loss) {
            return Ok(grads);
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.req(v) {
            return None;
        }
        let n = self.nodes[v.0].value.data.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[i].value.data;
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for gc in g.chunks(gb.len().max(1)) {
                        gb.iter_mut().zip(gc).for_each(|(x, y)| *x += sign * y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                let nb = xb.len().max(1);
                if let Some(ga) = self.acc(grads, *a) {
                    for (gac, gc) in ga.chunks_mut(nb).zip(g.chunks(nb)) {
                        for ((x, y), v) in gac.iter_mut().zip(gc).zip(xb) {
                            *x += y * v;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (gc, ac) in g.chunks(nb).zip(xa.chunks(nb)) {
                        for ((x, y), v) in gb.iter_mut().zip(gc).zip(ac) {
                            *x += y * v;
                        }
                    }
                }
            }
            Op::Div(a, b) => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                let nb = xb.len().max(1);
                if let Some(ga) = self.acc(grads, *a) {
                    for (gac, gc) in ga.chunks_mut(nb).zip(g.chunks(nb)) {
                        for ((x, y), d) in gac.iter_mut().zip(gc).zip(xb) {
                            *x += y / d;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (gc, ac) in g.chunks(nb).zip(xa.chunks(nb)) {
                        for (((x, y), v), d) in gb.iter_mut().zip(gc).zip(ac).zip(xb) {
                            *x -= y * v / (d * d);
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), o) in ga.iter_mut().zip(g).zip(out) {
                        *x += y * (1.0 - o * o);
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), o) in ga.iter_mut().zip(g).zip(out) {
                        *x += y * o;
                    }
                }
            }
            Op::Log(a) => {
                let xa = self.data(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(xa) {
                        *x += y / v;
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), o) in ga.iter_mut().zip(g).zip(out) {
                        *x += y * o * (1.0 - o);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), o) in ga.iter_mut().zip(g).zip(out) {
                        if *o > 0.0 {
                            *x += y;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let n = last_dim(&self.nodes[i].value.shape);
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..out.len() / n {
                        let (o, gr) = (&out[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let dot: f64 = o.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..n {
                            ga[r * n + j] += o[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let n = last_dim(&self.nodes[i].value.shape);
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..out.len() / n {
                        let gr = &g[r * n..(r + 1) * n];
                        let s: f64 = gr.iter().sum();
                        for j in 0..n {
                            ga[r * n + j] += gr[j] - out[r * n + j].exp() * s;
                        }
                    }
                }
            }
            Op::LogSumExp(a) => {
                let xa = self.data(*a);
                let n = last_dim(self.shape(*a));
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..out.len() {
                        for j in 0..n {
                            ga[r * n + j] += g[r] * (xa[r * n + j] - out[r]).exp();
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let n = last_dim(&self.nodes[i].value.shape);
                if let Some(ga) = self.acc(grads, *x) {
                    for (r, inv) in inv_std.iter().enumerate() {
                        let (y, gr) = (&out[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let mg = gr.iter().sum::<f64>() / n as f64;
                        let mgy = gr.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / n as f64;
                        for j in 0..n {
                            ga[r * n + j] += inv * (gr[j] - mg - y[j] * mgy);
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let sb = self.shape(*b);
                let (k, n) = (sb[0], sb[1]);
                let m = out.len() / n;
                let (xa, xb) = (self.data(*a), self.data(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    gemm_nt(m, n, k, g, xb, ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm_tn(k, m, n, xa, g, gb);
                }
            }
            Op::Bmm(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (xa, xb) = (self.data(*a), self.data(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for t in 0..bs {
                        gemm_nt(m, n, k, &g[t * m * n..(t + 1) * m * n], &xb[t * k * n..(t + 1) * k * n], &mut ga[t * m * k..(t + 1) * m * k]);
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for t in 0..bs {
                        gemm_tn(k, m, n, &xa[t * m * k..(t + 1) * m * k], &g[t * m * n..(t + 1) * m * n], &mut gb[t * k * n..(t + 1) * k * n]);
                    }
                }
            }
            Op::TransposeLast(a) => {
                let s = self.shape(*a);
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                if let Some(ga) = self.acc(grads, *a) {
                    for bi in 0..g.len() / (r * c) {
                        let off = bi * r * c;
                        for p in 0..r {
                            for q in 0..c {
                                ga[off + p * c + q] += g[off + q * r + p];
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Permute { x, perm } => {
                let idx = permute_index(self.shape(*x), perm);
                if let Some(ga) = self.acc(grads, *x) {
                    for (k, &src) in idx.iter().enumerate() {
                        ga[src] += g[k];
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                let s = self.shape(*x);
                let (outer, n, inner) = split_at_axis(s, *axis);
                let len = self.nodes[i].value.shape[*axis];
                if let Some(ga) = self.acc(grads, *x) {
                    for o in 0..outer {
                        let base = o * n * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        ga[base..base + len * inner].iter_mut().zip(src).for_each(|(p, q)| *p += q);
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_at_axis(&self.nodes[i].value.shape, *axis);
                let mut offset = 0;
                for &v in xs {
                    let n = self.shape(v)[*axis];
                    if let Some(gv) = self.acc(grads, v) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                            gv[o * n * inner..(o + 1) * n * inner].iter_mut().zip(src).for_each(|(p, q)| *p += q);
                        }
                    }
                    offset += n;
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    let d = g[0] / ga.len() as f64;
                    ga.iter_mut().for_each(|x| *x += d);
                }
            }
            Op::SumLast(a) => {
                let n = last_dim(self.shape(*a));
                if let Some(ga) = self.acc(grads, *a) {
                    for (k, x) in ga.iter_mut().enumerate() {
                        *x += g[k / n];
                    }
                }
            }
            Op::MeanAxis { x, axis } => {
                let (outer, n, inner) = split_at_axis(self.shape(*x), *axis);
                if let Some(ga) = self.acc(grads, *x) {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for j in 0..n {
                            let dst = &mut ga[(o * n + j) * inner..(o * n + j + 1) * inner];
                            dst.iter_mut().zip(src).for_each(|(p, q)| *p += q / n as f64);
                        }
                    }
                }
            }
        }
    }
}

/// For each output position of a permutation, the flat index of its source element.
fn permute_index(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let total = numel(shape);
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..total {
        idx.push(src);
        for d in (0..rank).rev() {
            counter[d] += 1;
            src += out_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            src -= out_strides[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    idx
}

/// Stabilized `log Σ exp(x)`.
pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
