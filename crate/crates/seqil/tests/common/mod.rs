#![allow(dead_code)]

use autodiff::gradcheck::check_store;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqil::models::layers::Ctx;
use seqil::models::mdn::{mdn_log_prob, MixtureParams};
use seqil::models::{Arch, Batch, Model, ModelConfig, Sample};
use seqil::sim::{Action, EnvConfig, HiddenState, Observation, Sim, WorldState};

/// Two hidden poses whose floors lie on the same horizontal line, with
/// vertices 1 cm apart, and a probe that first presses onto the floor and then
/// slides toward the vertices.
pub struct Witness {
    pub sim: Sim,
    pub a: WorldState,
    pub b: WorldState,
    pub probe: Vec<Action>,
}

pub fn ambiguity_witness() -> Witness {
    let sim = Sim::new(EnvConfig::noiseless()).unwrap();
    let theta = -sim.cfg.geometry.floor_tilt;
    let ha = HiddenState { x: 0.0, y: 0.0, theta };
    let hb = HiddenState { x: 0.01, y: 0.0, theta };
    let f = sim.faces(&ha);
    let tip = [f.vertex[0] + 0.025 * f.floor_dir[0] + 0.002 * f.floor_normal[0], f.vertex[1] + 0.025 * f.floor_dir[1] + 0.002 * f.floor_normal[1]];
    let place = |h: HiddenState| {
        let (mut s, _) = sim.reset_with(h, 0);
        s.ee_pose = [tip[0], tip[1], 0.0];
        s
    };
    let (a, b) = (place(ha), place(hb));
    let mut probe = vec![Action::new(0.0, -0.005, 0.0)];
    probe.extend([Action::new(0.01, 0.0, 0.0); 3]);
    Witness { sim, a, b, probe }
}

/// Observations produced by `actions` from `state`.
pub fn observe_all(sim: &Sim, state: &WorldState, actions: &[Action]) -> Vec<Observation> {
    let mut s = state.clone();
    actions
        .iter()
        .map(|&a| {
            let (n, o) = sim.step(&s, a).unwrap();
            s = n;
            o
        })
        .collect()
}

pub fn tiny(arch: Arch, k: usize) -> ModelConfig {
    ModelConfig { arch, d_model: 8, n_heads: 2, d_ff: 16, n_enc_layers: 1, n_dec_layers: 1, k, max_t: 4, max_m: 3, ..ModelConfig::default() }
}

pub fn random_sample(rng: &mut ChaCha8Rng, t: usize, m: usize, valid: usize) -> Sample {
    let mut tok = || {
        let mut x = [0.0; 12];
        x.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        x
    };
    let tokens = (0..t).map(|_| tok()).collect();
    let target = (0..m).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let hidden = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    Sample { tokens, target, valid_len: valid, hidden }
}

pub fn tiny_batch(seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_sample(&mut rng, 4, 3, 3);
    let b = random_sample(&mut rng, 4, 3, 2);
    Batch::new(&[&a, &b]).unwrap()
}

pub fn loss_value(model: &Model, batch: &Batch, weight: Option<f64>) -> f64 {
    let mut ctx = Ctx::new(&model.store);
    let l = match weight {
        Some(w) => model.supervised_loss(&mut ctx, batch, w, None).unwrap(),
        None => model.seq2seq_loss(&mut ctx, batch, None).unwrap().0,
    };
    ctx.g.data(l)[0]
}

pub fn gradient_error(arch: Arch, weight: Option<f64>) -> f64 {
    let mut model = Model::new(tiny(arch, 2), 5).unwrap();
    let batch = tiny_batch(6);
    let probe = model.clone();
    let res = check_store(
        &mut model.store,
        1e-5,
        |s| {
            let mut m = probe.clone();
            m.store = s.clone();
            Ok(loss_value(&m, &batch, weight))
        },
        |s| {
            let mut store = s.clone();
            store.zero_grads();
            let mut ctx = Ctx::new(s);
            let l = match weight {
                Some(w) => probe.supervised_loss(&mut ctx, &batch, w, None).unwrap(),
                None => probe.seq2seq_loss(&mut ctx, &batch, None).unwrap().0,
            };
            ctx.g.backward_into(l, &mut store)?;
            Ok(store.flat_grads())
        },
    )
    .unwrap();
    res.max_rel_err
}

/// Trapezoid integral of a one-dimensional mixture density over ±12 standard deviations.
pub fn integrate(p: &MixtureParams) -> f64 {
    let lo = (0..p.k()).map(|k| p.means[k][0] - 12.0 * p.variances[k][0].sqrt()).fold(f64::MAX, f64::min);
    let hi = (0..p.k()).map(|k| p.means[k][0] + 12.0 * p.variances[k][0].sqrt()).fold(f64::MIN, f64::max);
    let min_sd = (0..p.k()).map(|k| p.variances[k][0].sqrt()).fold(f64::MAX, f64::min);
    let n = (((hi - lo) / (min_sd / 50.0)).ceil() as usize).max(1000);
    let h = (hi - lo) / n as f64;
    let f = |x: f64| mdn_log_prob(p, &[x]).unwrap().exp();
    (1..n).map(|i| f(lo + i as f64 * h)).sum::<f64>() * h + 0.5 * h * (f(lo) + f(hi))
}
