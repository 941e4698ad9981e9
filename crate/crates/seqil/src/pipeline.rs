//! Demonstration datasets, training, and the DAgger-style collection loop.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use autodiff::{Adam, AdamConfig};
use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::{execute_exploration, execute_plan, Execution, ExplorationTemplate, ExplorationTrajectory, Oracle, SkillTrajectory};
use crate::models::features::{bc_input, encoder_tokens, hidden_to_model, pose_from_model, pose_to_model};
use crate::models::layers::Ctx;
use crate::models::{BcBatch, BcSample, Batch, DecodeMode, Model, ModelConfig, PrefixCorruption, Sample};
use crate::seeds::{derive, tag};
use crate::sim::{Action, HiddenState, Observation, Pose, ReplayStep, Sim, WorldState};

/// Current dataset file format version.
pub const DATASET_VERSION: u32 = 1;
const DATASET_FORMAT: &str = "seqil-dataset";

/// Environment, exploration templates and one skill oracle per template.
#[derive(Clone, Debug)]
pub struct Setup {
    pub sim: Sim,
    pub templates: Vec<ExplorationTemplate>,
    oracles: Vec<Oracle>,
    skill_len: usize,
}

/// State of an episode after the exploration phase.
#[derive(Clone, Debug)]
pub struct Episode {
    pub seed: u64,
    pub hidden: HiddenState,
    /// World state right after exploration, where skill execution starts.
    pub start: WorldState,
    pub exploration: ExplorationTrajectory,
}

impl Episode {
    /// Observed pose at the end of exploration, the anchor of model plans.
    pub fn anchor(&self) -> Pose {
        self.exploration.last_pose().expect("non-empty exploration")
    }

    fn last_observation(&self) -> Observation {
        self.exploration.steps.last().expect("non-empty exploration").observation
    }
}

impl Setup {
    pub fn new(sim: Sim, templates: Vec<ExplorationTemplate>, skill_len: usize) -> Result<Self> {
        if templates.is_empty() || templates.iter().any(ExplorationTemplate::is_empty) {
            return Err(Error::Contract("templates must be present and non-empty".into()));
        }
        let oracles = templates.iter().map(|t| Oracle::new(&sim, t, skill_len)).collect::<Result<Vec<_>>>()?;
        Ok(Self { sim, templates, oracles, skill_len })
    }

    pub fn skill_len(&self) -> usize {
        self.skill_len
    }

    /// Low-level step limit of a skill execution.
    pub fn max_exec_steps(&self) -> usize {
        3 * self.skill_len
    }

    /// Template used by the episode with `seed`, uniform over all templates.
    pub fn template_for(&self, seed: u64) -> usize {
        ChaCha8Rng::seed_from_u64(derive(seed, tag::TEMPLATES, 0)).gen_range(0..self.templates.len())
    }

    /// Resets with a random hidden pose and runs one exploration template.
    pub fn explore(&self, seed: u64) -> Result<Episode> {
        let (state, _) = self.sim.reset(seed, true);
        let template = &self.templates[self.template_for(seed)];
        let (start, exploration) = execute_exploration(&self.sim, &state, template)?;
        Ok(Episode { seed, hidden: state.hidden, start, exploration })
    }

    pub fn oracle_plan(&self, ep: &Episode) -> Result<SkillTrajectory> {
        self.oracles[ep.exploration.template_id].plan(&self.sim, &ep.hidden)
    }

    /// Executes a plan from the post-exploration state.
    pub fn execute(&self, ep: &Episode, plan: &SkillTrajectory) -> Result<Execution> {
        execute_plan(&self.sim, &ep.start, plan, self.max_exec_steps())
    }
}

/// Something that completes the skill after exploration.
#[derive(Clone, Copy, Debug)]
pub enum Policy<'a> {
    Oracle,
    Model(&'a Model),
}

/// World-frame plan generated by a Seq2Seq model.
pub fn model_plan(setup: &Setup, model: &Model, ep: &Episode) -> Result<SkillTrajectory> {
    let tokens = encoder_tokens(&ep.exploration.tokens());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let poses = model.generate(&tokens, DecodeMode::Deterministic, &mut rng)?;
    let scale = setup.sim.cfg.workspace.scale();
    let anchor = ep.anchor();
    Ok(SkillTrajectory::full(poses.iter().map(|p| pose_from_model(p, &anchor, &scale)).collect()))
}

/// Closed-loop BC rollout: a new target from the observation history for the
/// first `M` steps, then the last target is held.
pub fn run_bc(setup: &Setup, model: &Model, ep: &Episode) -> Result<Execution> {
    let scale = setup.sim.cfg.workspace.scale();
    let mut obs = ep.last_observation();
    let base = obs.ee_pose;
    let mut history = Vec::with_capacity(setup.skill_len);
    let mut s = ep.start.clone();
    let mut target = s.ee_pose;
    let mut trace = Vec::new();
    for k in 0..setup.max_exec_steps() {
        if k < setup.skill_len {
            history.push(bc_input(&obs, &base));
            let mix = model.bc_forward(&history)?;
            let mean = &mix.means[mix.top_component()];
            target = pose_from_model(&[mean[0], mean[1], mean[2]], &obs.ee_pose, &scale);
        }
        let a = Action::new(target[0] - s.ee_pose[0], target[1] - s.ee_pose[1], target[2] - s.ee_pose[2]);
        let (next, o) = setup.sim.step(&s, a)?;
        trace.push(ReplayStep { action: a, observation: o });
        s = next;
        obs = o;
        if s.latched {
            return Ok(Execution { state: s, success: true, steps: k + 1, trace });
        }
    }
    let steps = setup.max_exec_steps();
    Ok(Execution { state: s, success: false, steps, trace })
}

/// Runs the skill phase of `ep` under `policy`. Returns the executed plan, if
/// the policy produces one up front, and the execution.
pub fn attempt(setup: &Setup, policy: Policy, ep: &Episode) -> Result<(Option<SkillTrajectory>, Execution)> {
    match policy {
        Policy::Oracle => {
            let plan = setup.oracle_plan(ep)?;
            let exec = setup.execute(ep, &plan)?;
            Ok((Some(plan), exec))
        }
        Policy::Model(m) if m.is_seq2seq() => {
            let plan = model_plan(setup, m, ep)?;
            let exec = setup.execute(ep, &plan)?;
            Ok((Some(plan), exec))
        }
        Policy::Model(m) => Ok((None, run_bc(setup, m, ep)?)),
    }
}

/// Who produced the skill trajectory of a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Robot,
    Expert,
}

/// One demonstration: exploration, skill plan and the hidden pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRecord {
    pub exploration: ExplorationTrajectory,
    pub skill: SkillTrajectory,
    pub hidden: HiddenState,
    pub success_source: Source,
    /// Episode seed; replaying it reproduces the exploration.
    pub seed: u64,
}

impl DemoRecord {
    pub fn validate(&self, setup: &Setup) -> Result<()> {
        if self.exploration.is_empty() {
            return Err(Error::Contract("record without exploration".into()));
        }
        if self.skill.poses.len() != setup.skill_len || self.skill.valid_len > self.skill.poses.len() || self.skill.valid_len == 0 {
            return Err(Error::Contract(format!("skill of {} poses (valid {}) for length {}", self.skill.poses.len(), self.skill.valid_len, setup.skill_len)));
        }
        if !setup.sim.cfg.workspace.contains(&self.hidden) {
            return Err(Error::Contract(format!("hidden pose out of bounds: {:?}", self.hidden)));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    format: String,
    version: u32,
}

/// Ordered, append-only collection of demonstrations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub version: u32,
    pub records: Vec<DemoRecord>,
}

impl Dataset {
    pub fn new() -> Self {
        Self { version: DATASET_VERSION, records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, r: DemoRecord) {
        self.records.push(r);
    }

    /// Records selected by index, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self { version: self.version, records: idx.iter().map(|&i| self.records[i].clone()).collect() }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &DatasetHeader { format: DATASET_FORMAT.into(), version: self.version })?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let header: DatasetHeader = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?).map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?,
            None => return Err(Error::Parse { line: 1, msg: "missing header".into() }),
        };
        if header.format != DATASET_FORMAT {
            return Err(Error::Parse { line: 1, msg: format!("unknown format {:?}", header.format) });
        }
        if header.version != DATASET_VERSION {
            return Err(Error::Version { expected: DATASET_VERSION, found: header.version });
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?);
        }
        Ok(Self { version: header.version, records })
    }
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    ds.write(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::read(BufReader::new(std::fs::File::open(path)?))
}

/// Replays the exploration of a record from its seed.
pub fn replay_record(setup: &Setup, r: &DemoRecord) -> Result<Episode> {
    let ep = setup.explore(r.seed)?;
    if ep.exploration.template_id != r.exploration.template_id {
        return Err(Error::Contract(format!("record selects template {} but seed {} selects {}", r.exploration.template_id, r.seed, ep.exploration.template_id)));
    }
    Ok(ep)
}

/// Oracle demonstrations on `n` random episodes.
pub fn collect_demos(setup: &Setup, n: usize, master_seed: u64) -> Result<Dataset> {
    let mut ds = Dataset::new();
    for i in 0..n {
        let ep = setup.explore(derive(master_seed, tag::COLLECT, i as u64))?;
        let plan = setup.oracle_plan(&ep)?;
        ds.push(DemoRecord { exploration: ep.exploration, skill: plan, hidden: ep.hidden, success_source: Source::Expert, seed: ep.seed });
    }
    Ok(ds)
}

/// Normalized Seq2Seq sample of a record.
pub fn seq2seq_sample(setup: &Setup, r: &DemoRecord) -> Sample {
    let scale = setup.sim.cfg.workspace.scale();
    let anchor = r.exploration.last_pose().expect("non-empty exploration");
    Sample {
        tokens: encoder_tokens(&r.exploration.tokens()),
        target: r.skill.poses.iter().map(|p| pose_to_model(p, &anchor, &scale)).collect(),
        valid_len: r.skill.valid_len,
        hidden: hidden_to_model(&r.hidden, &scale),
    }
}

/// BC sample of a record: the record's plan is re-executed from the replayed
/// post-exploration state for `M` steps; inputs are the observations seen
/// before each step and targets the next via-point relative to the observed pose.
pub fn bc_sample(setup: &Setup, r: &DemoRecord) -> Result<BcSample> {
    let ep = replay_record(setup, r)?;
    let scale = setup.sim.cfg.workspace.scale();
    let mut o = ep.last_observation();
    let base = o.ee_pose;
    let n = r.skill.valid_len;
    let mut s = ep.start.clone();
    let mut obs = Vec::with_capacity(setup.skill_len);
    let mut target = Vec::with_capacity(setup.skill_len);
    for k in 0..setup.skill_len {
        let via = r.skill.poses[k.min(n - 1)];
        obs.push(bc_input(&o, &base));
        target.push(pose_to_model(&via, &o.ee_pose, &scale));
        let a = Action::new(via[0] - s.ee_pose[0], via[1] - s.ee_pose[1], via[2] - s.ee_pose[2]);
        let (next, no) = setup.sim.step(&s, a)?;
        s = next;
        o = no;
    }
    Ok(BcSample { obs, target })
}

/// Optimization settings shared by training from scratch and fine-tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Gradient steps when training from scratch.
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of zeroing each teacher-forced decoder input.
    pub prefix_dropout: f64,
    /// Deviation of Gaussian noise added to teacher-forced decoder inputs,
    /// in normalized pose units.
    pub prefix_noise: f64,
    /// Add the latent penalty against the normalized hidden pose.
    pub oracle: bool,
    pub latent_weight: f64,
    /// Maximum global gradient norm; 0 disables clipping.
    pub grad_clip: f64,
    /// Anneal the learning rate from `lr` to zero over each training call
    /// along a half cosine.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 3000, batch_size: 16, lr: 1e-3, prefix_dropout: 0.75, prefix_noise: 0.0, oracle: false, latent_weight: 1.0, grad_clip: 0.0, cosine_decay: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !(0.0..1.0).contains(&self.prefix_dropout) || !(self.prefix_noise >= 0.0) || !(self.latent_weight >= 0.0) || !(self.grad_clip >= 0.0) {
            return Err(Error::Config("invalid training configuration".into()));
        }
        Ok(())
    }
}

/// Training inputs derived from a dataset.
#[derive(Clone, Debug)]
pub enum TrainData {
    Seq2Seq(Vec<Sample>),
    Bc(Vec<BcSample>),
}

impl TrainData {
    pub fn build(setup: &Setup, model: &Model, ds: &Dataset) -> Result<Self> {
        if model.is_seq2seq() {
            Ok(Self::Seq2Seq(ds.records.iter().map(|r| seq2seq_sample(setup, r)).collect()))
        } else {
            Ok(Self::Bc(ds.records.iter().map(|r| bc_sample(setup, r)).collect::<Result<_>>()?))
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Seq2Seq(s) => s.len(),
            Self::Bc(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A model with its optimizer state and training randomness.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    opt: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let opt = Adam::new(&model.store, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
        let mut model = model;
        model.latent_supervised |= cfg.oracle && model.is_seq2seq();
        Ok(Self { model, cfg, opt, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    /// One Adam step on the given batch; returns the loss.
    pub fn step(&mut self, data: &TrainData, idx: &[usize]) -> Result<f64> {
        let (loss, graph) = {
            let mut ctx = Ctx::new(&self.model.store);
            let loss = match data {
                TrainData::Seq2Seq(s) => {
                    let refs: Vec<&Sample> = idx.iter().map(|&i| &s[i]).collect();
                    let batch = Batch::new(&refs)?;
                    let m = batch.target.shape[1];
                    let c = PrefixCorruption::sample(&mut self.rng, refs.len(), m, self.cfg.prefix_dropout, self.cfg.prefix_noise);
                    if self.cfg.oracle {
                        self.model.supervised_loss(&mut ctx, &batch, self.cfg.latent_weight, Some(&c))?
                    } else {
                        self.model.seq2seq_loss(&mut ctx, &batch, Some(&c))?.0
                    }
                }
                TrainData::Bc(s) => {
                    let refs: Vec<&BcSample> = idx.iter().map(|&i| &s[i]).collect();
                    self.model.bc_loss(&mut ctx, &BcBatch::new(&refs)?)?
                }
            };
            (loss, ctx.g)
        };
        let value = graph.data(loss)[0];
        if !value.is_finite() {
            return Err(Error::Contract(format!("non-finite training loss {value}")));
        }
        self.model.store.zero_grads();
        graph.backward_into(loss, &mut self.model.store)?;
        if self.cfg.grad_clip > 0.0 {
            clip_grad_norm(&mut self.model.store, self.cfg.grad_clip);
        }
        self.opt.step(&mut self.model.store)?;
        Ok(value)
    }

    /// Sets the learning rate for update `i` of a call making `total` updates.
    fn schedule(&mut self, i: usize, total: usize) {
        self.opt.cfg.lr = if self.cfg.cosine_decay {
            0.5 * self.cfg.lr * (1.0 + (std::f64::consts::PI * i as f64 / total as f64).cos())
        } else {
            self.cfg.lr
        };
    }

    /// `steps` updates on random batches drawn without replacement; returns the losses.
    pub fn train_steps(&mut self, data: &TrainData, steps: usize) -> Result<Vec<f64>> {
        let n = data.len();
        if n == 0 {
            return Err(Error::Contract("empty training set".into()));
        }
        let bs = self.cfg.batch_size.min(n);
        (0..steps)
            .map(|i| {
                self.schedule(i, steps);
                let idx = sample_indices(&mut self.rng, n, bs).into_vec();
                self.step(data, &idx)
            })
            .collect()
    }

    /// Shuffled passes over the whole training set; returns the mean loss per epoch.
    pub fn train_epochs(&mut self, data: &TrainData, epochs: usize) -> Result<Vec<f64>> {
        let n = data.len();
        if n == 0 {
            return Err(Error::Contract("empty training set".into()));
        }
        let per_epoch = n.div_ceil(self.cfg.batch_size);
        let mut out = Vec::with_capacity(epochs);
        for e in 0..epochs {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut self.rng);
            let mut total = 0.0;
            let chunks: Vec<&[usize]> = perm.chunks(self.cfg.batch_size).collect();
            for (j, c) in chunks.iter().enumerate() {
                self.schedule(e * per_epoch + j, epochs * per_epoch);
                total += self.step(data, c)?;
            }
            out.push(total / chunks.len() as f64);
        }
        Ok(out)
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(store: &mut autodiff::ParamStore, max_norm: f64) -> f64 {
    let ids: Vec<_> = store.ids().collect();
    let norm = ids.iter().filter_map(|&id| store.get(id).grad.as_ref()).flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        for id in ids {
            if let Some(g) = store.get_mut(id).grad.as_mut() {
                g.iter_mut().for_each(|v| *v *= f);
            }
        }
    }
    norm
}

/// Trains a fresh model on a dataset. Returns the model and per-step losses.
pub fn train_from_scratch(setup: &Setup, ds: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig, seed: u64) -> Result<(Model, Vec<f64>)> {
    let model = Model::new(model_cfg.clone(), derive(seed, tag::INIT, 0))?;
    let data = TrainData::build(setup, &model, ds)?;
    let mut trainer = Trainer::new(model, cfg.clone(), derive(seed, tag::BATCH, 0))?;
    let losses = trainer.train_steps(&data, cfg.steps)?;
    Ok((trainer.model, losses))
}

/// Fine-tunes the trainer's model for `epochs` passes over the dataset.
pub fn fine_tune(setup: &Setup, trainer: &mut Trainer, ds: &Dataset, epochs: usize) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(Error::Contract("fine-tuning needs a non-empty dataset".into()));
    }
    let data = TrainData::build(setup, &trainer.model, ds)?;
    trainer.train_epochs(&data, epochs)
}

/// Settings of the incremental collection loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaggerConfig {
    /// Maximum number of demonstrations (episodes).
    pub budget: usize,
    pub epochs_per_record: usize,
    /// Consecutive successes that end the run.
    pub stop_streak: usize,
    /// Evaluate every this many episodes (0 disables).
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Write a checkpoint every this many episodes (0 disables).
    pub checkpoint_every: usize,
    /// Peak learning rate of each fine-tuning call.
    pub lr: f64,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        Self { budget: 50, epochs_per_record: 50, stop_streak: 10, eval_every: 0, eval_episodes: 50, checkpoint_every: 0, lr: 3e-4 }
    }
}

impl DaggerConfig {
    /// Training settings for fine-tuning: `train` with this loop's learning rate.
    pub fn fine_tune_config(&self, train: &TrainConfig) -> TrainConfig {
        TrainConfig { lr: self.lr, ..train.clone() }
    }
}

/// One DAgger episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub seed: u64,
    pub template_id: usize,
    pub success: bool,
    pub source: Source,
    pub dataset_len: usize,
    pub streak: usize,
    /// Environment steps of this episode: exploration, the robot's attempt, and
    /// the expert's demonstration after a failure.
    pub env_steps: usize,
    pub cumulative_steps: usize,
    /// Mean loss of each fine-tuning epoch after this episode.
    pub train_loss: Vec<f64>,
    /// Success rate of the periodic evaluation, when one ran after this episode.
    pub eval_success: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Streak,
    Budget,
}

/// What the collection loop needs from the model being taught.
pub trait Learner {
    /// World-frame skill plan for an explored episode.
    fn plan(&self, setup: &Setup, ep: &Episode) -> Result<SkillTrajectory>;
    /// Trains on the grown dataset; returns the per-epoch losses.
    fn update(&mut self, setup: &Setup, ds: &Dataset, epochs: usize) -> Result<Vec<f64>>;
    /// Policy used by periodic evaluations.
    fn policy(&self) -> Policy<'_>;
    fn save(&self, path: &Path) -> Result<()>;
}

impl Learner for Trainer {
    fn plan(&self, setup: &Setup, ep: &Episode) -> Result<SkillTrajectory> {
        model_plan(setup, &self.model, ep)
    }

    fn update(&mut self, setup: &Setup, ds: &Dataset, epochs: usize) -> Result<Vec<f64>> {
        fine_tune(setup, self, ds, epochs)
    }

    fn policy(&self) -> Policy<'_> {
        Policy::Model(&self.model)
    }

    fn save(&self, path: &Path) -> Result<()> {
        self.model.save(path)
    }
}

/// Incremental data collection with expert corrections.
///
/// Each episode explores with a random template, then the learner plans and
/// executes the skill. A success appends the learner's own plan; a failure
/// resets to the post-exploration state and appends the oracle's plan. The
/// learner is updated on the grown dataset after every episode. The run ends
/// after `stop_streak` consecutive successes or when the budget is spent.
pub fn dagger_run<L: Learner>(setup: &Setup, learner: &mut L, cfg: &DaggerConfig, master_seed: u64, checkpoint_dir: Option<&Path>) -> Result<(Dataset, Vec<IterationLog>, StopReason)> {
    if cfg.budget == 0 {
        return Err(Error::Contract("budget must be at least 1".into()));
    }
    let mut ds = Dataset::new();
    let mut log = Vec::new();
    let mut streak = 0;
    let mut cumulative = 0;
    for i in 0..cfg.budget {
        let ep = setup.explore(derive(master_seed, tag::DAGGER, i as u64))?;
        let plan = learner.plan(setup, &ep)?;
        let exec = setup.execute(&ep, &plan)?;
        let mut env_steps = ep.exploration.len() + exec.steps;
        let (skill, source) = if exec.success {
            streak += 1;
            (plan, Source::Robot)
        } else {
            streak = 0;
            let expert = setup.oracle_plan(&ep)?;
            env_steps += setup.execute(&ep, &expert)?.steps;
            (expert, Source::Expert)
        };
        cumulative += env_steps;
        let template_id = ep.exploration.template_id;
        ds.push(DemoRecord { exploration: ep.exploration, skill, hidden: ep.hidden, success_source: source, seed: ep.seed });
        let done = streak >= cfg.stop_streak;
        let train_loss = if done { Vec::new() } else { learner.update(setup, &ds, cfg.epochs_per_record)? };
        let eval_success = if cfg.eval_every > 0 && ((i + 1) % cfg.eval_every == 0 || done || i + 1 == cfg.budget) {
            Some(crate::eval::evaluate(setup, learner.policy(), cfg.eval_episodes, derive(master_seed, tag::EVAL, 0))?.success_rate)
        } else {
            None
        };
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (i + 1) % cfg.checkpoint_every == 0 {
                learner.save(&checkpoint_path(dir, i + 1))?;
            }
        }
        log.push(IterationLog {
            iteration: i,
            seed: ep.seed,
            template_id,
            success: exec.success,
            source,
            dataset_len: ds.len(),
            streak,
            env_steps,
            cumulative_steps: cumulative,
            train_loss,
            eval_success,
        });
        if done {
            return Ok((ds, log, StopReason::Streak));
        }
    }
    Ok((ds, log, StopReason::Budget))
}

/// Path of the periodic checkpoint after `episodes` episodes.
pub fn checkpoint_path(dir: &Path, episodes: usize) -> PathBuf {
    dir.join(format!("checkpoint_{episodes:04}.ckpt"))
}

/// Writes a run log as JSON lines.
pub fn write_log(path: &Path, log: &[IterationLog]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for l in log {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<IterationLog>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?);
        }
    }
    Ok(out)
}
