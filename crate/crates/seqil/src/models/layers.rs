//! Parameterized building blocks evaluated on a [`Ctx`].

use autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::Result;

/// A graph under construction plus lazily inserted parameter leaves.
pub struct Ctx<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    cache: Vec<Option<Var>>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { g: Graph::new(), store, cache: vec![None; store.len()] }
    }

    /// Graph handle of a parameter, inserting it on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.cache[id.0] {
            return v;
        }
        let v = self.g.param(self.store, id);
        self.cache[id.0] = Some(v);
        v
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }
}

/// Xavier-uniform initialized matrix.
pub fn xavier<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("consistent shape")
}

/// Affine map `x·W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, din: usize, dout: usize) -> Result<Self> {
        let w = store.add(&format!("{name}.w"), xavier(rng, din, dout))?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[dout]))?;
        Ok(Self { w, b: Some(b) })
    }

    /// Linear map `x·W` without a bias.
    pub fn without_bias<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, din: usize, dout: usize) -> Result<Self> {
        let w = store.add(&format!("{name}.w"), xavier(rng, din, dout))?;
        Ok(Self { w, b: None })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.p(self.w);
        let y = ctx.g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = ctx.p(b);
                Ok(ctx.g.add(y, b)?)
            }
            None => Ok(y),
        }
    }
}

/// Layer normalization with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        let gain = store.add(&format!("{name}.gain"), Tensor::full(&[d], 1.0))?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[d]))?;
        Ok(Self { gain, bias })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (gain, bias) = (ctx.p(self.gain), ctx.p(self.bias));
        let n = ctx.g.layer_norm(x);
        let y = ctx.g.mul(n, gain)?;
        Ok(ctx.g.add(y, bias)?)
    }
}

/// Multi-head scaled dot-product attention. Keys carry no bias, which would
/// only shift every score of a query by the same amount.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub d: usize,
}

impl Attention {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(store, rng, &format!("{name}.q"), d, d)?,
            k: Linear::without_bias(store, rng, &format!("{name}.k"), d, d)?,
            v: Linear::new(store, rng, &format!("{name}.v"), d, d)?,
            o: Linear::new(store, rng, &format!("{name}.o"), d, d)?,
            heads,
            d,
        })
    }

    fn split(&self, ctx: &mut Ctx, x: Var, b: usize, t: usize) -> Result<Var> {
        let dh = self.d / self.heads;
        let x = ctx.g.reshape(x, &[b, t, self.heads, dh])?;
        let x = ctx.g.permute(x, &[0, 2, 1, 3])?;
        Ok(ctx.g.reshape(x, &[b * self.heads, t, dh])?)
    }

    /// `xq: [B, Tq, d]`, `xkv: [B, Tk, d]`, optional additive `mask: [Tq, Tk]`.
    pub fn forward(&self, ctx: &mut Ctx, xq: Var, xkv: Var, mask: Option<Var>) -> Result<Var> {
        let (b, tq) = (ctx.g.shape(xq)[0], ctx.g.shape(xq)[1]);
        let tk = ctx.g.shape(xkv)[1];
        let dh = self.d / self.heads;
        let q = self.q.forward(ctx, xq)?;
        let k = self.k.forward(ctx, xkv)?;
        let v = self.v.forward(ctx, xkv)?;
        let q = self.split(ctx, q, b, tq)?;
        let k = self.split(ctx, k, b, tk)?;
        let v = self.split(ctx, v, b, tk)?;
        let kt = ctx.g.transpose_last(k)?;
        let s = ctx.g.bmm(q, kt)?;
        let mut s = ctx.g.scale(s, 1.0 / (dh as f64).sqrt());
        if let Some(m) = mask {
            s = ctx.g.add(s, m)?;
        }
        let p = ctx.g.softmax(s);
        let y = ctx.g.bmm(p, v)?;
        let y = ctx.g.reshape(y, &[b, self.heads, tq, dh])?;
        let y = ctx.g.permute(y, &[0, 2, 1, 3])?;
        let y = ctx.g.reshape(y, &[b, tq, self.d])?;
        self.o.forward(ctx, y)
    }
}

/// Position-wise two-layer ReLU network.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, d: usize, d_ff: usize) -> Result<Self> {
        Ok(Self {
            l1: Linear::new(store, rng, &format!("{name}.l1"), d, d_ff)?,
            l2: Linear::new(store, rng, &format!("{name}.l2"), d_ff, d)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.l1.forward(ctx, x)?;
        let h = ctx.g.relu(h);
        self.l2.forward(ctx, h)
    }
}

/// Single LSTM cell with gate order input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, din: usize, hidden: usize) -> Result<Self> {
        let wx = store.add(&format!("{name}.wx"), xavier(rng, din, 4 * hidden))?;
        let wh = store.add(&format!("{name}.wh"), xavier(rng, hidden, 4 * hidden))?;
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let b = store.add(&format!("{name}.b"), Tensor::vector(bias))?;
        Ok(Self { wx, wh, b, hidden })
    }

    /// One step: `x: [B, din]`, `h, c: [B, hidden]` → `(h', c')`.
    pub fn step(&self, ctx: &mut Ctx, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let (wx, wh, b) = (ctx.p(self.wx), ctx.p(self.wh), ctx.p(self.b));
        let gx = ctx.g.matmul(x, wx)?;
        let gh = ctx.g.matmul(h, wh)?;
        let gates = ctx.g.add(gx, gh)?;
        let gates = ctx.g.add(gates, b)?;
        let n = self.hidden;
        let i = ctx.g.slice(gates, 1, 0, n)?;
        let f = ctx.g.slice(gates, 1, n, n)?;
        let u = ctx.g.slice(gates, 1, 2 * n, n)?;
        let o = ctx.g.slice(gates, 1, 3 * n, n)?;
        let i = ctx.g.sigmoid(i);
        let f = ctx.g.sigmoid(f);
        let u = ctx.g.tanh(u);
        let o = ctx.g.sigmoid(o);
        let keep = ctx.g.mul(f, c)?;
        let write = ctx.g.mul(i, u)?;
        let c2 = ctx.g.add(keep, write)?;
        let tc = ctx.g.tanh(c2);
        let h2 = ctx.g.mul(o, tc)?;
        Ok((h2, c2))
    }
}

/// Sinusoidal positional encoding of shape `[t, d]`.
pub fn positional_encoding(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            data[pos * d + i] = angle.sin();
            if i + 1 < d {
                data[pos * d + i + 1] = angle.cos();
            }
        }
    }
    Tensor::new(vec![t, d], data).expect("consistent shape")
}

/// Additive mask of shape `[t, t]` that hides future positions.
pub fn causal_mask(t: usize) -> Tensor {
    let mut data = vec![0.0; t * t];
    for i in 0..t {
        for j in i + 1..t {
            data[i * t + j] = -1e9;
        }
    }
    Tensor::new(vec![t, t], data).expect("consistent shape")
}
