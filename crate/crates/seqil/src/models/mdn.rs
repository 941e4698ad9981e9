//! Mixture density head: diagonal Gaussian mixtures over poses.

use autodiff::{logsumexp, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::Ctx;
use crate::error::{Error, Result};

/// Floor added to every variance.
pub const VAR_FLOOR: f64 = 1e-6;

/// Values of one mixture: `K` weights, `K × D` means and variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl MixtureParams {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// Builds a mixture from raw head outputs: logits, means and log-variances.
    pub fn from_raw(logits: &[f64], means: &[f64], log_vars: &[f64], dim: usize) -> Self {
        let lse = logsumexp(logits);
        let weights = logits.iter().map(|l| (l - lse).exp()).collect();
        let means = means.chunks(dim).map(<[f64]>::to_vec).collect();
        let variances = log_vars.chunks(dim).map(|c| c.iter().map(|v| v.exp() + VAR_FLOOR).collect()).collect();
        Self { weights, means, variances }
    }

    /// Index of the component with the largest weight (first on ties).
    pub fn top_component(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    /// Draws a component, then a point from its Gaussian.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut k = self.k() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// Log-density of `p` under the mixture, stabilized with log-sum-exp.
pub fn mdn_log_prob(params: &MixtureParams, p: &[f64]) -> Result<f64> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite pose".into()));
    }
    if p.len() != params.dim() {
        return Err(Error::Contract(format!("pose of length {} for {}-dim mixture", p.len(), params.dim())));
    }
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let terms: Vec<f64> = (0..params.k())
        .map(|k| {
            let lp: f64 = p
                .iter()
                .zip(&params.means[k])
                .zip(&params.variances[k])
                .map(|((x, m), v)| -0.5 * ((x - m) * (x - m) / v + v.ln() + ln_2pi))
                .sum();
            params.weights[k].ln() + lp
        })
        .collect();
    Ok(logsumexp(&terms))
}

/// Graph handles of a batch of mixtures: `logits [.., K]`, `mu` and `var [.., K, D]`.
#[derive(Clone, Copy, Debug)]
pub struct MixtureVars {
    pub logits: Var,
    pub mu: Var,
    pub var: Var,
}

/// Splits head output `[.., K·(1 + 2D)]` into mixture tensors.
pub fn split_head(ctx: &mut Ctx, out: Var, k: usize, dim: usize) -> Result<MixtureVars> {
    let shape = ctx.g.shape(out).to_vec();
    let axis = shape.len() - 1;
    let lead = &shape[..axis];
    let logits = ctx.g.slice(out, axis, 0, k)?;
    let mu = ctx.g.slice(out, axis, k, k * dim)?;
    let lv = ctx.g.slice(out, axis, k + k * dim, k * dim)?;
    let mut kd = lead.to_vec();
    kd.extend([k, dim]);
    let mu = ctx.g.reshape(mu, &kd)?;
    let lv = ctx.g.reshape(lv, &kd)?;
    let e = ctx.g.exp(lv);
    let var = ctx.g.add_scalar(e, VAR_FLOOR);
    Ok(MixtureVars { logits, mu, var })
}

/// Per-position log-likelihood `[..]` of `target [.., D]` under the mixtures.
pub fn log_likelihood(ctx: &mut Ctx, m: MixtureVars, target: &Tensor) -> Result<Var> {
    let mu_shape = ctx.g.shape(m.mu).to_vec();
    let k = mu_shape[mu_shape.len() - 2];
    let d = mu_shape[mu_shape.len() - 1];
    if target.numel() * k != mu_shape.iter().product::<usize>() {
        return Err(Error::Contract(format!("target shape {:?} vs mixture {:?}", target.shape, mu_shape)));
    }
    let mut expanded = Vec::with_capacity(target.numel() * k);
    for row in target.data.chunks(d) {
        for _ in 0..k {
            expanded.extend_from_slice(row);
        }
    }
    let y = ctx.g.constant(Tensor::new(mu_shape, expanded)?);
    let diff = ctx.g.sub(y, m.mu)?;
    let sq = ctx.g.square(diff)?;
    let maha = ctx.g.div(sq, m.var)?;
    let lv = ctx.g.log(m.var)?;
    let s = ctx.g.add(maha, lv)?;
    let s = ctx.g.add_scalar(s, (2.0 * std::f64::consts::PI).ln());
    let s = ctx.g.sum_last(s);
    let comp = ctx.g.scale(s, -0.5);
    let lw = ctx.g.log_softmax(m.logits);
    let joint = ctx.g.add(comp, lw)?;
    Ok(ctx.g.logsumexp(joint))
}

/// Reads the mixture at flat position `i` of evaluated mixture tensors.
pub fn mixture_at(ctx: &Ctx, m: MixtureVars, i: usize) -> MixtureParams {
    let k = *ctx.g.shape(m.logits).last().unwrap();
    let d = *ctx.g.shape(m.mu).last().unwrap();
    let logits = &ctx.g.data(m.logits)[i * k..(i + 1) * k];
    let mu = &ctx.g.data(m.mu)[i * k * d..(i + 1) * k * d];
    let var = &ctx.g.data(m.var)[i * k * d..(i + 1) * k * d];
    let lse = logsumexp(logits);
    MixtureParams {
        weights: logits.iter().map(|l| (l - lse).exp()).collect(),
        means: mu.chunks(d).map(<[f64]>::to_vec).collect(),
        variances: var.chunks(d).map(<[f64]>::to_vec).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_at_mean() {
        let p = MixtureParams { weights: vec![1.0], means: vec![vec![0.3]], variances: vec![vec![1.0]] };
        let lp = mdn_log_prob(&p, &[0.3]).unwrap();
        assert!((lp - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn duplicate_components_collapse() {
        let single = MixtureParams { weights: vec![1.0], means: vec![vec![0.1, -0.2]], variances: vec![vec![0.3, 0.05]] };
        let double = MixtureParams {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.1, -0.2]; 2],
            variances: vec![vec![0.3, 0.05]; 2],
        };
        for x in [[0.0, 0.0], [0.4, -0.1], [-1.0, 2.0]] {
            let a = mdn_log_prob(&single, &x).unwrap();
            let b = mdn_log_prob(&double, &x).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_pose_is_rejected() {
        let p = MixtureParams { weights: vec![1.0], means: vec![vec![0.0]], variances: vec![vec![1.0]] };
        assert!(mdn_log_prob(&p, &[f64::NAN]).is_err());
    }

    #[test]
    fn raw_outputs_give_simplex_and_floored_variances() {
        let m = MixtureParams::from_raw(&[3.0, -1.0, 0.5], &[0.0; 6], &[-40.0; 6], 2);
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(m.variances.iter().flatten().all(|&v| v >= VAR_FLOOR));
        assert_eq!(m.top_component(), 0);
    }
}
