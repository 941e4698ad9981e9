//! Pre-norm Transformer encoder–decoder.

use autodiff::{ParamStore, Var};
use rand::Rng;

use super::layers::{causal_mask, positional_encoding, Attention, Ctx, FeedForward, LayerNorm, Linear};
use super::ModelConfig;
use crate::error::Result;

#[derive(Clone, Debug)]
struct EncoderLayer {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ff: FeedForward,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross: Attention,
    ln3: LayerNorm,
    ff: FeedForward,
}

/// Encoder over exploration tokens and an autoregressive decoder over poses
/// that cross-attends to a single memory token derived from `z`.
#[derive(Clone, Debug)]
pub struct TransformerNet {
    input: Linear,
    encoder: Vec<EncoderLayer>,
    enc_norm: LayerNorm,
    to_z: Linear,
    z_memory: Linear,
    pose_in: Linear,
    decoder: Vec<DecoderLayer>,
    dec_norm: LayerNorm,
    pub head: Linear,
    d: usize,
}

impl TransformerNet {
    pub fn new<R: Rng>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let d = cfg.d_model;
        let input = Linear::new(store, rng, "enc.input", cfg.token_dim(), d)?;
        let mut encoder = Vec::new();
        for i in 0..cfg.n_enc_layers {
            let n = format!("enc.{i}");
            encoder.push(EncoderLayer {
                ln1: LayerNorm::new(store, &format!("{n}.ln1"), d)?,
                attn: Attention::new(store, rng, &format!("{n}.attn"), d, cfg.n_heads)?,
                ln2: LayerNorm::new(store, &format!("{n}.ln2"), d)?,
                ff: FeedForward::new(store, rng, &format!("{n}.ff"), d, cfg.d_ff)?,
            });
        }
        let enc_norm = LayerNorm::new(store, "enc.norm", d)?;
        let to_z = Linear::new(store, rng, "enc.z", d, cfg.z_dim)?;
        let z_memory = Linear::new(store, rng, "dec.memory", cfg.z_dim, d)?;
        let pose_in = Linear::new(store, rng, "dec.input", cfg.pose_dim, d)?;
        let mut decoder = Vec::new();
        for i in 0..cfg.n_dec_layers {
            let n = format!("dec.{i}");
            decoder.push(DecoderLayer {
                ln1: LayerNorm::new(store, &format!("{n}.ln1"), d)?,
                self_attn: Attention::new(store, rng, &format!("{n}.self"), d, cfg.n_heads)?,
                ln2: LayerNorm::new(store, &format!("{n}.ln2"), d)?,
                cross: Attention::new(store, rng, &format!("{n}.cross"), d, cfg.n_heads)?,
                ln3: LayerNorm::new(store, &format!("{n}.ln3"), d)?,
                ff: FeedForward::new(store, rng, &format!("{n}.ff"), d, cfg.d_ff)?,
            });
        }
        let dec_norm = LayerNorm::new(store, "dec.norm", d)?;
        let head = Linear::new(store, rng, "dec.head", d, cfg.head_dim())?;
        Ok(Self { input, encoder, enc_norm, to_z, z_memory, pose_in, decoder, dec_norm, head, d })
    }

    /// `tokens: [B, T, token_dim]` → `z: [B, z_dim]`.
    pub fn encode(&self, ctx: &mut Ctx, tokens: Var) -> Result<Var> {
        let t = ctx.g.shape(tokens)[1];
        let h = self.input.forward(ctx, tokens)?;
        let pe = ctx.g.constant(positional_encoding(t, self.d));
        let mut h = ctx.g.add(h, pe)?;
        for layer in &self.encoder {
            let x = layer.ln1.forward(ctx, h)?;
            let a = layer.attn.forward(ctx, x, x, None)?;
            h = ctx.g.add(h, a)?;
            let x = layer.ln2.forward(ctx, h)?;
            let f = layer.ff.forward(ctx, x)?;
            h = ctx.g.add(h, f)?;
        }
        let h = self.enc_norm.forward(ctx, h)?;
        let pooled = ctx.g.mean_axis(h, 1)?;
        self.to_z.forward(ctx, pooled)
    }

    /// `z: [B, z_dim]`, `inputs: [B, L, pose_dim]` → head output `[B, L, head_dim]`.
    pub fn decode(&self, ctx: &mut Ctx, z: Var, inputs: Var) -> Result<Var> {
        let (b, l) = (ctx.g.shape(inputs)[0], ctx.g.shape(inputs)[1]);
        let mem = self.z_memory.forward(ctx, z)?;
        let mem = ctx.g.reshape(mem, &[b, 1, self.d])?;
        let h = self.pose_in.forward(ctx, inputs)?;
        let pe = ctx.g.constant(positional_encoding(l, self.d));
        let mut h = ctx.g.add(h, pe)?;
        let mask = ctx.g.constant(causal_mask(l));
        for layer in &self.decoder {
            let x = layer.ln1.forward(ctx, h)?;
            let a = layer.self_attn.forward(ctx, x, x, Some(mask))?;
            h = ctx.g.add(h, a)?;
            let x = layer.ln2.forward(ctx, h)?;
            let c = layer.cross.forward(ctx, x, mem, None)?;
            h = ctx.g.add(h, c)?;
            let x = layer.ln3.forward(ctx, h)?;
            let f = layer.ff.forward(ctx, x)?;
            h = ctx.g.add(h, f)?;
        }
        let h = self.dec_norm.forward(ctx, h)?;
        self.head.forward(ctx, h)
    }
}
