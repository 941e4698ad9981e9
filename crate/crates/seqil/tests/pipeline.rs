use std::path::Path;

use seqil::experts::{default_templates, SkillTrajectory};
use seqil::models::{Model, ModelConfig};
use seqil::pipeline::{
    collect_demos, dagger_run, fine_tune, load_dataset, read_log, replay_record, save_dataset, write_log, DaggerConfig, Dataset, Episode, Learner, Policy, Setup, Source, StopReason,
    TrainConfig, Trainer,
};
use seqil::sim::{EnvConfig, Sim};
use seqil::{Error, Result};

fn setup(env: EnvConfig) -> Setup {
    Setup::new(Sim::new(env).unwrap(), default_templates(), 12).unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig { d_model: 8, n_heads: 2, d_ff: 16, n_enc_layers: 1, n_dec_layers: 1, k: 2, ..ModelConfig::default() }
}

/// Plans with full knowledge of the hidden pose.
struct Perfect {
    updates: usize,
}

/// Always plans to stay at the post-exploration pose.
struct Hopeless {
    updates: usize,
}

impl Learner for Perfect {
    fn plan(&self, setup: &Setup, ep: &Episode) -> Result<SkillTrajectory> {
        setup.oracle_plan(ep)
    }
    fn update(&mut self, _: &Setup, _: &Dataset, _: usize) -> Result<Vec<f64>> {
        self.updates += 1;
        Ok(vec![0.0])
    }
    fn policy(&self) -> Policy<'_> {
        Policy::Oracle
    }
    fn save(&self, _: &Path) -> Result<()> {
        Ok(())
    }
}

impl Learner for Hopeless {
    fn plan(&self, setup: &Setup, ep: &Episode) -> Result<SkillTrajectory> {
        Ok(SkillTrajectory::full(vec![ep.start.ee_pose; setup.skill_len()]))
    }
    fn update(&mut self, _: &Setup, ds: &Dataset, _: usize) -> Result<Vec<f64>> {
        assert_eq!(ds.len(), self.updates + 1);
        self.updates += 1;
        Ok(vec![0.0])
    }
    fn policy(&self) -> Policy<'_> {
        Policy::Oracle
    }
    fn save(&self, _: &Path) -> Result<()> {
        Ok(())
    }
}

#[test]
fn perfect_learner_stops_after_ten_successes() {
    let s = setup(EnvConfig::default());
    let mut l = Perfect { updates: 0 };
    let (ds, log, stop) = dagger_run(&s, &mut l, &DaggerConfig::default(), 3, None).unwrap();
    assert_eq!(stop, StopReason::Streak);
    assert_eq!(log.len(), 10);
    assert_eq!(ds.len(), 10);
    assert!(ds.records.iter().all(|r| r.success_source == Source::Robot));
    assert_eq!(l.updates, 9);
    assert_eq!(log.last().unwrap().streak, 10);
}

#[test]
fn every_failure_adds_one_expert_record() {
    let s = setup(EnvConfig::default());
    let mut l = Hopeless { updates: 0 };
    let cfg = DaggerConfig { budget: 15, ..DaggerConfig::default() };
    let (ds, log, stop) = dagger_run(&s, &mut l, &cfg, 4, None).unwrap();
    assert_eq!(stop, StopReason::Budget);
    assert_eq!(ds.len(), 15);
    assert_eq!(l.updates, 15);
    for (r, entry) in ds.records.iter().zip(&log) {
        assert!(!entry.success);
        assert_eq!(r.success_source, Source::Expert);
        assert_eq!(entry.streak, 0);
        let ep = replay_record(&s, r).unwrap();
        assert_eq!(r.skill, s.oracle_plan(&ep).unwrap());
        assert!(s.execute(&ep, &r.skill).unwrap().success);
    }
}

#[test]
fn untrained_model_run_is_faithful_and_reproducible() {
    let s = setup(EnvConfig::default());
    let cfg = DaggerConfig { budget: 6, epochs_per_record: 1, ..DaggerConfig::default() };
    let run = || {
        let mut t = Trainer::new(Model::new(small_model(), 1).unwrap(), TrainConfig::default(), 2).unwrap();
        let (ds, log, stop) = dagger_run(&s, &mut t, &cfg, 9, None).unwrap();
        (ds, log, stop, t.model.store.flat_values())
    };
    let (ds, log, stop, params) = run();
    assert_eq!(stop, StopReason::Budget);
    assert!(ds.len() <= 6);
    let mut streak = 0;
    for (i, (r, entry)) in ds.records.iter().zip(&log).enumerate() {
        assert_eq!(entry.dataset_len, i + 1);
        assert_eq!(r.success_source, if entry.success { Source::Robot } else { Source::Expert });
        streak = if entry.success { streak + 1 } else { 0 };
        assert_eq!(entry.streak, streak);
        assert!(entry.streak < 10);
        assert_eq!(entry.train_loss.len(), 1);
        assert_eq!(replay_record(&s, r).unwrap().exploration, r.exploration);
    }
    let again = run();
    assert_eq!(again.0, ds);
    assert_eq!(again.1, log);
    assert_eq!(again.3, params);
}

#[test]
fn dataset_file_round_trip_is_value_exact() {
    let s = setup(EnvConfig::default());
    let ds = collect_demos(&s, 50, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("demos.jsonl");
    save_dataset(&path, &ds).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, ds);
    for (a, b) in back.records.iter().zip(&ds.records) {
        for (x, y) in a.exploration.steps.iter().zip(&b.exploration.steps) {
            for (u, v) in x.observation.to_array().iter().zip(y.observation.to_array()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }
}

#[test]
fn noiseless_replay_reproduces_observations() {
    let s = setup(EnvConfig::noiseless());
    for r in &collect_demos(&s, 5, 6).unwrap().records {
        let ep = replay_record(&s, r).unwrap();
        assert_eq!(ep.exploration, r.exploration);
        assert_eq!(ep.hidden, r.hidden);
    }
}

#[test]
fn replay_with_wrong_template_is_rejected() {
    let s = setup(EnvConfig::default());
    let mut r = collect_demos(&s, 1, 7).unwrap().records.remove(0);
    r.exploration.template_id = (r.exploration.template_id + 1) % 5;
    assert!(matches!(replay_record(&s, &r), Err(Error::Contract(_))));
}

#[test]
fn fine_tuning_contract() {
    let s = setup(EnvConfig::default());
    let ds = collect_demos(&s, 8, 8).unwrap();
    let mut t = Trainer::new(Model::new(small_model(), 1).unwrap(), TrainConfig { batch_size: 4, lr: 3e-3, ..TrainConfig::default() }, 2).unwrap();
    let before = t.model.store.flat_values();
    assert!(fine_tune(&s, &mut t, &ds, 0).unwrap().is_empty());
    assert_eq!(t.model.store.flat_values(), before);
    assert!(matches!(fine_tune(&s, &mut t, &Dataset::new(), 1), Err(Error::Contract(_))));
    let losses = fine_tune(&s, &mut t, &ds, 40).unwrap();
    let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = losses[35..].iter().sum::<f64>() / 5.0;
    assert!(tail < head, "{losses:?}");
}

#[test]
fn oracle_training_marks_the_model() {
    let model = Model::new(small_model(), 1).unwrap();
    let t = Trainer::new(model.clone(), TrainConfig { oracle: true, ..TrainConfig::default() }, 0).unwrap();
    assert!(t.model.latent_supervised);
    let t = Trainer::new(model, TrainConfig::default(), 0).unwrap();
    assert!(!t.model.latent_supervised);
}

#[test]
fn training_config_rejects_unknown_keys_and_bad_values() {
    assert!(serde_json::from_str::<TrainConfig>(r#"{"steps": 10, "momentum": 0.9}"#).is_err());
    assert!(serde_json::from_str::<DaggerConfig>(r#"{"budget": 10, "patience": 3}"#).is_err());
    let bad = TrainConfig { lr: -1.0, ..TrainConfig::default() };
    assert!(matches!(Trainer::new(Model::new(small_model(), 0).unwrap(), bad, 0), Err(Error::Config(_))));
    let bad = DaggerConfig { lr: 0.0, ..DaggerConfig::default() }.fine_tune_config(&TrainConfig::default());
    assert!(matches!(Trainer::new(Model::new(small_model(), 0).unwrap(), bad, 0), Err(Error::Config(_))));
}

#[test]
fn fine_tuning_uses_the_loop_learning_rate() {
    let train = TrainConfig { steps: 7, ..TrainConfig::default() };
    let ft = DaggerConfig::default().fine_tune_config(&train);
    assert_eq!(ft.lr, DaggerConfig::default().lr);
    assert_eq!(TrainConfig { lr: train.lr, ..ft }, train);
}

#[test]
fn run_log_and_checkpoints_are_written() {
    let s = setup(EnvConfig::default());
    let dir = tempfile::tempdir().unwrap();
    let cfg = DaggerConfig { budget: 4, epochs_per_record: 1, checkpoint_every: 2, eval_every: 2, eval_episodes: 3, ..DaggerConfig::default() };
    let mut t = Trainer::new(Model::new(small_model(), 1).unwrap(), TrainConfig::default(), 2).unwrap();
    let (_, log, _) = dagger_run(&s, &mut t, &cfg, 1, Some(dir.path())).unwrap();
    assert!(seqil::pipeline::checkpoint_path(dir.path(), 2).exists());
    assert!(seqil::pipeline::checkpoint_path(dir.path(), 4).exists());
    let evals: Vec<bool> = log.iter().map(|l| l.eval_success.is_some()).collect();
    assert_eq!(evals, vec![false, true, false, true]);
    let path = dir.path().join("log.jsonl");
    write_log(&path, &log).unwrap();
    assert_eq!(read_log(&path).unwrap(), log);
    let loaded = Model::load(&seqil::pipeline::checkpoint_path(dir.path(), 4)).unwrap();
    assert_eq!(loaded.store.flat_values(), t.model.store.flat_values());
}
