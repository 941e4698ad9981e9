//! Sequence models: Transformer and LSTM encoder–decoders with a mixture
//! density head, plus the BC-LSTM baseline.

pub mod features;
pub mod layers;
pub mod lstm;
pub mod mdn;
pub mod transformer;

use std::path::Path;

use autodiff::{checkpoint, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use layers::Ctx;
use lstm::{BcNet, LstmNet};
use mdn::{MixtureParams, MixtureVars};
use transformer::TransformerNet;

/// Network family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Transformer,
    Lstm,
    BcLstm,
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Self::Transformer),
            "lstm" => Ok(Self::Lstm),
            "bc" | "bc_lstm" => Ok(Self::BcLstm),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

fn default_log_var_bias() -> f64 {
    2.0 * 0.1f64.ln()
}

/// Sizes and initialization of a sequence model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub z_dim: usize,
    pub k: usize,
    pub max_t: usize,
    pub max_m: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub pose_dim: usize,
    /// Initial bias of the log-variance outputs.
    pub log_var_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Transformer,
            d_model: 32,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 64,
            z_dim: 3,
            k: 5,
            max_t: crate::experts::template_len(),
            max_m: crate::experts::DEFAULT_SKILL_LEN,
            obs_dim: 9,
            act_dim: 3,
            pose_dim: 3,
            log_var_bias: default_log_var_bias(),
        }
    }
}

impl ModelConfig {
    pub fn with_arch(arch: Arch) -> Self {
        Self { arch, ..Self::default() }
    }

    pub fn token_dim(&self) -> usize {
        self.obs_dim + self.act_dim
    }

    /// Width of the mixture head: logits, means and log-variances.
    pub fn head_dim(&self) -> usize {
        self.k * (1 + 2 * self.pose_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.d_model == 0 || self.k == 0 || self.max_m == 0 || self.max_t == 0 {
            return bad("d_model, k, max_t and max_m must be positive");
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.obs_dim != 9 || self.act_dim != 3 || self.pose_dim != 3 || self.z_dim != 3 {
            return bad("observation, action, pose and latent dimensions are fixed at 9, 3, 3, 3");
        }
        if !self.log_var_bias.is_finite() {
            return bad("log_var_bias must be finite");
        }
        Ok(())
    }
}

/// How the decoder turns a mixture into the next pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Mean of the highest-weight component.
    Deterministic,
    /// Component draw, then a Gaussian draw.
    Sample,
}

#[derive(Clone, Debug)]
enum Net {
    Transformer(TransformerNet),
    Lstm(LstmNet),
    Bc(BcNet),
}

/// One normalized Seq2Seq training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Encoder inputs `[T][12]`.
    pub tokens: Vec<[f64; 12]>,
    /// Skill poses `[M][3]`.
    pub target: Vec<[f64; 3]>,
    pub valid_len: usize,
    /// Normalized hidden pose.
    pub hidden: [f64; 3],
}

/// Stacked Seq2Seq samples.
#[derive(Clone, Debug)]
pub struct Batch {
    pub tokens: Tensor,
    pub target: Tensor,
    pub mask: Tensor,
    pub hidden: Tensor,
}

impl Batch {
    pub fn new(samples: &[&Sample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
        let (t, m) = (first.tokens.len(), first.target.len());
        if t == 0 || m == 0 {
            return Err(Error::Contract("empty sequence in batch".into()));
        }
        let b = samples.len();
        let mut tokens = Vec::with_capacity(b * t * 12);
        let mut target = Vec::with_capacity(b * m * 3);
        let mut mask = Vec::with_capacity(b * m);
        let mut hidden = Vec::with_capacity(b * 3);
        for s in samples {
            if s.tokens.len() != t || s.target.len() != m || s.valid_len > m {
                return Err(Error::Contract("samples in a batch must share lengths".into()));
            }
            tokens.extend(s.tokens.iter().flatten());
            target.extend(s.target.iter().flatten());
            mask.extend((0..m).map(|i| if i < s.valid_len { 1.0 } else { 0.0 }));
            hidden.extend(s.hidden);
        }
        Ok(Self {
            tokens: Tensor::new(vec![b, t, 12], tokens)?,
            target: Tensor::new(vec![b, m, 3], target)?,
            mask: Tensor::new(vec![b, m], mask)?,
            hidden: Tensor::new(vec![b, 3], hidden)?,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One normalized BC sequence: observations and next-target poses.
#[derive(Clone, Debug, PartialEq)]
pub struct BcSample {
    pub obs: Vec<[f64; 9]>,
    pub target: Vec<[f64; 3]>,
}

#[derive(Clone, Debug)]
pub struct BcBatch {
    pub obs: Tensor,
    pub target: Tensor,
}

impl BcBatch {
    pub fn new(samples: &[&BcSample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
        let l = first.obs.len();
        if l == 0 {
            return Err(Error::Contract("empty sequence in batch".into()));
        }
        let mut obs = Vec::new();
        let mut target = Vec::new();
        for s in samples {
            if s.obs.len() != l || s.target.len() != l {
                return Err(Error::Contract("samples in a batch must share lengths".into()));
            }
            obs.extend(s.obs.iter().flatten());
            target.extend(s.target.iter().flatten());
        }
        let b = samples.len();
        Ok(Self { obs: Tensor::new(vec![b, l, 9], obs)?, target: Tensor::new(vec![b, l, 3], target)? })
    }
}

/// Corruption of the teacher-forced decoder inputs of a `[B, M]` batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixCorruption {
    /// Per-position multiplier; the start position is always 1.
    pub keep: Vec<f64>,
    /// Additive noise `[B, M, 3]` on kept inputs.
    pub noise: Vec<f64>,
}

impl PrefixCorruption {
    /// Keeps every non-start input with probability `1 − rate` and perturbs
    /// kept inputs with Gaussian noise of deviation `sigma`.
    pub fn sample<R: Rng>(rng: &mut R, b: usize, m: usize, rate: f64, sigma: f64) -> Self {
        let keep: Vec<f64> = (0..b * m).map(|i| if i % m == 0 || rng.gen::<f64>() >= rate { 1.0 } else { 0.0 }).collect();
        let noise = if sigma > 0.0 { (0..b * m * 3).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect() } else { vec![0.0; b * m * 3] };
        Self { keep, noise }
    }
}

/// A network with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    /// Whether training supervised the latent with the hidden pose.
    pub latent_supervised: bool,
    net: Net,
    sos: Option<ParamId>,
}

/// Contents of the JSON sidecar written next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub latent_supervised: bool,
}

/// Latent summary `z` of one exploration trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub z: Vec<f64>,
}

impl Model {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (net, head) = match cfg.arch {
            Arch::Transformer => {
                let n = TransformerNet::new(&cfg, &mut store, &mut rng)?;
                let h = n.head.b.expect("head has a bias");
                (Net::Transformer(n), h)
            }
            Arch::Lstm => {
                let n = LstmNet::new(&cfg, &mut store, &mut rng)?;
                let h = n.head.b.expect("head has a bias");
                (Net::Lstm(n), h)
            }
            Arch::BcLstm => {
                let n = BcNet::new(&cfg, &mut store, &mut rng)?;
                let h = n.head.b.expect("head has a bias");
                (Net::Bc(n), h)
            }
        };
        let sos = match cfg.arch {
            Arch::BcLstm => None,
            _ => Some(store.add("dec.sos", Tensor::zeros(&[cfg.pose_dim]))?),
        };
        let lv_start = cfg.k * (1 + cfg.pose_dim);
        for v in &mut store.get_mut(head).data[lv_start..] {
            *v = cfg.log_var_bias;
        }
        Ok(Self { cfg, store, latent_supervised: false, net, sos })
    }

    pub fn is_seq2seq(&self) -> bool {
        self.sos.is_some()
    }

    fn seq2seq_only(&self) -> Result<()> {
        if self.is_seq2seq() {
            Ok(())
        } else {
            Err(Error::Contract("operation requires a Seq2Seq model".into()))
        }
    }

    /// Graph of `z [B, z_dim]` for `tokens [B, T, 12]`.
    pub fn encode_var(&self, ctx: &mut Ctx, tokens: Var) -> Result<Var> {
        match &self.net {
            Net::Transformer(n) => n.encode(ctx, tokens),
            Net::Lstm(n) => n.encode(ctx, tokens),
            Net::Bc(_) => Err(Error::Contract("BC-LSTM has no encoder".into())),
        }
    }

    /// Mixtures `[B, L+1]` after the start token followed by `prefix [B, L, 3]`.
    pub fn decode_var(&self, ctx: &mut Ctx, z: Var, prefix: Option<Var>) -> Result<MixtureVars> {
        let sos = self.sos.ok_or_else(|| Error::Contract("BC-LSTM has no decoder".into()))?;
        let b = ctx.g.shape(z)[0];
        let pd = self.cfg.pose_dim;
        let zeros = ctx.g.constant(Tensor::zeros(&[b, 1, pd]));
        let s = ctx.p(sos);
        let start = ctx.g.add(zeros, s)?;
        let inputs = match prefix {
            Some(p) => ctx.g.concat(&[start, p], 1)?,
            None => start,
        };
        let out = match &self.net {
            Net::Transformer(n) => n.decode(ctx, z, inputs)?,
            Net::Lstm(n) => n.decode(ctx, z, inputs)?,
            Net::Bc(_) => unreachable!("checked above"),
        };
        mdn::split_head(ctx, out, self.cfg.k, pd)
    }

    /// Latent state of a normalized token sequence.
    pub fn encode(&self, tokens: &[[f64; 12]]) -> Result<LatentState> {
        self.seq2seq_only()?;
        if tokens.is_empty() {
            return Err(Error::Contract("empty exploration trajectory".into()));
        }
        let mut ctx = Ctx::new(&self.store);
        let x = ctx.g.constant(Tensor::new(vec![1, tokens.len(), 12], tokens.iter().flatten().copied().collect())?);
        let z = self.encode_var(&mut ctx, x)?;
        Ok(LatentState { z: ctx.g.data(z).to_vec() })
    }

    /// Mixtures at every position given the normalized poses fed so far.
    /// Returns `prefix.len() + 1` mixtures.
    pub fn decode_all(&self, z: &LatentState, prefix: &[[f64; 3]]) -> Result<Vec<MixtureParams>> {
        self.seq2seq_only()?;
        let mut ctx = Ctx::new(&self.store);
        let zv = ctx.g.constant(Tensor::new(vec![1, z.z.len()], z.z.clone())?);
        let p = if prefix.is_empty() {
            None
        } else {
            Some(ctx.g.constant(Tensor::new(vec![1, prefix.len(), 3], prefix.iter().flatten().copied().collect())?))
        };
        let m = self.decode_var(&mut ctx, zv, p)?;
        Ok((0..=prefix.len()).map(|i| mdn::mixture_at(&ctx, m, i)).collect())
    }

    /// Mixture over the next pose after `prefix`.
    pub fn decode_step(&self, z: &LatentState, prefix: &[[f64; 3]]) -> Result<MixtureParams> {
        Ok(self.decode_all(z, prefix)?.pop().expect("at least one mixture"))
    }

    /// Autoregressive plan of `max_m` normalized poses.
    pub fn generate<R: Rng>(&self, tokens: &[[f64; 12]], mode: DecodeMode, rng: &mut R) -> Result<Vec<[f64; 3]>> {
        let z = self.encode(tokens)?;
        let mut poses: Vec<[f64; 3]> = Vec::with_capacity(self.cfg.max_m);
        for _ in 0..self.cfg.max_m {
            let mix = self.decode_step(&z, &poses)?;
            let next = match mode {
                DecodeMode::Deterministic => mix.means[mix.top_component()].clone(),
                DecodeMode::Sample => mix.sample(rng),
            };
            poses.push([next[0], next[1], next[2]]);
        }
        Ok(poses)
    }

    /// Masked mean negative log-likelihood with teacher forcing, optionally on
    /// corrupted decoder inputs. Returns the loss and the latent `z`.
    pub fn seq2seq_loss(&self, ctx: &mut Ctx, batch: &Batch, corrupt: Option<&PrefixCorruption>) -> Result<(Var, Var)> {
        self.seq2seq_only()?;
        let (b, m) = (batch.target.shape[0], batch.target.shape[1]);
        if batch.mask.shape != [b, m] || batch.tokens.shape[0] != b {
            return Err(Error::Contract(format!("mask {:?} does not match targets {:?}", batch.mask.shape, batch.target.shape)));
        }
        let count: f64 = batch.mask.data.iter().sum();
        if count == 0.0 {
            return Err(Error::Contract("no valid steps in batch".into()));
        }
        if let Some(c) = corrupt {
            if c.keep.len() != b * m || c.noise.len() != b * m * 3 {
                return Err(Error::Contract("prefix corruption does not match the batch".into()));
            }
        }
        let tokens = ctx.g.constant(batch.tokens.clone());
        let z = self.encode_var(ctx, tokens)?;
        let prefix = if m > 1 {
            let mut data = Vec::with_capacity(b * (m - 1) * 3);
            for bi in 0..b {
                for t in 0..m - 1 {
                    let (i, j) = (bi * m + t, bi * m + t + 1);
                    for d in 0..3 {
                        let v = batch.target.data[i * 3 + d];
                        data.push(corrupt.map_or(v, |c| c.keep[j] * (v + c.noise[j * 3 + d])));
                    }
                }
            }
            Some(ctx.g.constant(Tensor::new(vec![b, m - 1, 3], data)?))
        } else {
            None
        };
        let mix = self.decode_var(ctx, z, prefix)?;
        let ll = mdn::log_likelihood(ctx, mix, &batch.target)?;
        let mask = ctx.g.constant(batch.mask.clone());
        let w = ctx.g.mul(ll, mask)?;
        let s = ctx.g.sum(w);
        Ok((ctx.g.scale(s, -1.0 / count), z))
    }

    /// Seq2Seq loss plus `weight` times the batch-mean squared distance between
    /// `z` and the normalized hidden pose.
    pub fn supervised_loss(&self, ctx: &mut Ctx, batch: &Batch, weight: f64, corrupt: Option<&PrefixCorruption>) -> Result<Var> {
        let (loss, z) = self.seq2seq_loss(ctx, batch, corrupt)?;
        let e = ctx.g.constant(batch.hidden.clone());
        let d = ctx.g.sub(z, e)?;
        let sq = ctx.g.square(d)?;
        let s = ctx.g.sum(sq);
        let pen = ctx.g.scale(s, weight / batch.len() as f64);
        Ok(ctx.g.add(loss, pen)?)
    }

    /// Mean negative log-likelihood of BC targets.
    pub fn bc_loss(&self, ctx: &mut Ctx, batch: &BcBatch) -> Result<Var> {
        let Net::Bc(net) = &self.net else {
            return Err(Error::Contract("bc_loss requires a BC-LSTM model".into()));
        };
        let obs = ctx.g.constant(batch.obs.clone());
        let out = net.forward(ctx, obs)?;
        let mix = mdn::split_head(ctx, out, self.cfg.k, self.cfg.pose_dim)?;
        let ll = mdn::log_likelihood(ctx, mix, &batch.target)?;
        let s = ctx.g.mean(ll);
        Ok(ctx.g.scale(s, -1.0))
    }

    /// Mixture over the next target after the normalized observation history.
    pub fn bc_forward(&self, obs_history: &[[f64; 9]]) -> Result<MixtureParams> {
        let Net::Bc(net) = &self.net else {
            return Err(Error::Contract("bc_forward requires a BC-LSTM model".into()));
        };
        if obs_history.is_empty() {
            return Err(Error::Contract("empty observation history".into()));
        }
        let l = obs_history.len();
        let mut ctx = Ctx::new(&self.store);
        let x = ctx.g.constant(Tensor::new(vec![1, l, 9], obs_history.iter().flatten().copied().collect())?);
        let out = net.forward(&mut ctx, x)?;
        let mix = mdn::split_head(&mut ctx, out, self.cfg.k, self.cfg.pose_dim)?;
        Ok(mdn::mixture_at(&ctx, mix, l - 1))
    }

    /// Writes the parameter checkpoint and a JSON sidecar holding the config.
    pub fn save(&self, ckpt: &Path) -> Result<()> {
        checkpoint::save(ckpt, &self.store)?;
        let meta = ModelMeta { config: self.cfg.clone(), latent_supervised: self.latent_supervised };
        std::fs::write(sidecar_path(ckpt), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Loads a checkpoint, validating it against its sidecar config.
    pub fn load(ckpt: &Path) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(ckpt))?)?;
        let mut model = Self::new(meta.config, 0)?;
        model.latent_supervised = meta.latent_supervised;
        let stored = checkpoint::load(ckpt)?;
        model.store.load_from(&stored).map_err(|e| Error::Config(format!("checkpoint does not match its config: {e}")))?;
        Ok(model)
    }
}

/// Sidecar config path next to a checkpoint: `model.ckpt` → `model.ckpt.json`.
pub fn sidecar_path(ckpt: &Path) -> std::path::PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
