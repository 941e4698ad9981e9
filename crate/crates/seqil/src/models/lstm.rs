//! LSTM encoder–decoder and the BC-LSTM baseline.

use autodiff::{ParamStore, Tensor, Var};
use rand::Rng;

use super::layers::{Ctx, Linear, LstmCell};
use super::ModelConfig;
use crate::error::Result;

fn step_input(ctx: &mut Ctx, seq: Var, t: usize) -> Result<Var> {
    let s = ctx.g.shape(seq).to_vec();
    let x = ctx.g.slice(seq, 1, t, 1)?;
    Ok(ctx.g.reshape(x, &[s[0], s[2]])?)
}

fn stack_steps(ctx: &mut Ctx, outs: &[Var]) -> Result<Var> {
    let mut rows = Vec::with_capacity(outs.len());
    for &o in outs {
        let s = ctx.g.shape(o).to_vec();
        rows.push(ctx.g.reshape(o, &[s[0], 1, s[1]])?);
    }
    Ok(ctx.g.concat(&rows, 1)?)
}

/// Recurrent encoder over exploration tokens; the decoder is initialized from
/// `z` and receives `z` alongside the previous pose at every step.
#[derive(Clone, Debug)]
pub struct LstmNet {
    encoder: LstmCell,
    to_z: Linear,
    init: Linear,
    decoder: LstmCell,
    pub head: Linear,
    d: usize,
}

impl LstmNet {
    pub fn new<R: Rng>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            encoder: LstmCell::new(store, rng, "enc.lstm", cfg.token_dim(), d)?,
            to_z: Linear::new(store, rng, "enc.z", d, cfg.z_dim)?,
            init: Linear::new(store, rng, "dec.init", cfg.z_dim, d)?,
            decoder: LstmCell::new(store, rng, "dec.lstm", cfg.pose_dim + cfg.z_dim, d)?,
            head: Linear::new(store, rng, "dec.head", d, cfg.head_dim())?,
            d,
        })
    }

    pub fn encode(&self, ctx: &mut Ctx, tokens: Var) -> Result<Var> {
        let (b, t) = (ctx.g.shape(tokens)[0], ctx.g.shape(tokens)[1]);
        let mut h = ctx.g.constant(Tensor::zeros(&[b, self.d]));
        let mut c = h;
        for i in 0..t {
            let x = step_input(ctx, tokens, i)?;
            (h, c) = self.encoder.step(ctx, x, h, c)?;
        }
        self.to_z.forward(ctx, h)
    }

    pub fn decode(&self, ctx: &mut Ctx, z: Var, inputs: Var) -> Result<Var> {
        let (b, l) = (ctx.g.shape(inputs)[0], ctx.g.shape(inputs)[1]);
        let h0 = self.init.forward(ctx, z)?;
        let mut h = ctx.g.tanh(h0);
        let mut c = ctx.g.constant(Tensor::zeros(&[b, self.d]));
        let mut outs = Vec::with_capacity(l);
        for i in 0..l {
            let p = step_input(ctx, inputs, i)?;
            let x = ctx.g.concat(&[p, z], 1)?;
            (h, c) = self.decoder.step(ctx, x, h, c)?;
            outs.push(self.head.forward(ctx, h)?);
        }
        stack_steps(ctx, &outs)
    }
}

/// Recurrent policy from observation history to a mixture over the next target pose.
#[derive(Clone, Debug)]
pub struct BcNet {
    cell: LstmCell,
    pub head: Linear,
    d: usize,
}

impl BcNet {
    pub fn new<R: Rng>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        Ok(Self {
            cell: LstmCell::new(store, rng, "bc.lstm", cfg.obs_dim, cfg.d_model)?,
            head: Linear::new(store, rng, "bc.head", cfg.d_model, cfg.head_dim())?,
            d: cfg.d_model,
        })
    }

    /// `obs: [B, L, obs_dim]` → head output `[B, L, head_dim]`.
    pub fn forward(&self, ctx: &mut Ctx, obs: Var) -> Result<Var> {
        let (b, l) = (ctx.g.shape(obs)[0], ctx.g.shape(obs)[1]);
        let mut h = ctx.g.constant(Tensor::zeros(&[b, self.d]));
        let mut c = h;
        let mut outs = Vec::with_capacity(l);
        for i in 0..l {
            let x = step_input(ctx, obs, i)?;
            (h, c) = self.cell.step(ctx, x, h, c)?;
            outs.push(self.head.forward(ctx, h)?);
        }
        stack_steps(ctx, &outs)
    }
}
