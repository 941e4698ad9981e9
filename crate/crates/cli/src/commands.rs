//! One function per subcommand. Each writes its artifacts into the run directory.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqil::eval::{
    baseline_comparison, comparison_means, demo_ablation, evaluate, sample_efficiency_report, state_estimation_curve, write_csv, write_json, EvalReport,
};
use seqil::experts::{collect_exploration_templates, load_templates, save_templates, ExplorationTemplate};
use seqil::models::Model;
use seqil::pipeline::{collect_demos, dagger_run, load_dataset, replay_record, save_dataset, train_from_scratch, write_log, Dataset, Policy, Setup, Trainer};
use seqil::seeds::{derive, tag};
use seqil::sim::{write_replay, Sim};
use seqil::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;

fn templates(cfg: &RunConfig) -> Result<Vec<ExplorationTemplate>> {
    match &cfg.templates {
        Some(p) => load_templates(p),
        None => collect_exploration_templates(cfg.n_templates, &mut ChaCha8Rng::seed_from_u64(derive(cfg.seed, tag::TEMPLATES, 0))),
    }
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    Setup::new(Sim::new(cfg.env().clone())?, templates(cfg)?, cfg.skill_len)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("--{what} is required")))
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    load_dataset(required(&cfg.dataset, "dataset")?)
}

fn checkpoint(cfg: &RunConfig) -> Result<Model> {
    Model::load(required(&cfg.checkpoint, "checkpoint")?)
}

/// Short machine-readable summary printed on success.
#[derive(Serialize)]
pub struct Summary {
    pub command: &'static str,
    pub run_dir: PathBuf,
    pub result: serde_json::Value,
}

pub fn collect_templates(cfg: &RunConfig, dir: &Path) -> Result<serde_json::Value> {
    let t = templates(cfg)?;
    save_templates(&dir.join("templates.json"), &t)?;
    Ok(serde_json::json!({ "templates": t.len(), "length": t.first().map_or(0, ExplorationTemplate::len) }))
}

pub fn demos(cfg: &RunConfig, dir: &Path) -> Result<serde_json::Value> {
    let s = setup(cfg)?;
    save_templates(&dir.join("templates.json"), &s.templates)?;
    let ds = collect_demos(&s, cfg.n_episodes, cfg.seed)?;
    save_dataset(&dir.join("dataset.jsonl"), &ds)?;
    Ok(serde_json::json!({ "records": ds.len() }))
}

pub fn train(cfg: &RunConfig, dir: &Path) -> Result<serde_json::Value> {
    let s = setup(cfg)?;
    let ds = dataset(cfg)?;
    let (model, losses) = train_from_scratch(&s, &ds, cfg.model(), &cfg.train, cfg.seed)?;
    model.save(&dir.join("model.ckpt"))?;
    let rows: Vec<LossRow> = losses.iter().enumerate().map(|(i, &loss)| LossRow { step: i + 1, loss }).collect();
    write_loss_csv(&dir.join("losses.csv"), &rows)?;
    Ok(serde_json::json!({ "records": ds.len(), "steps": losses.len(), "final_loss": losses.last() }))
}

struct LossRow {
    step: usize,
    loss: f64,
}

fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut text = String::from("step,loss\n");
    for r in rows {
        text.push_str(&format!("{},{}\n", r.step, r.loss));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn dagger(cfg: &RunConfig, dir: &Path) -> Result<serde_json::Value> {
    let s = setup(cfg)?;
    let model = match &cfg.checkpoint {
        Some(p) => Model::load(p)?,
        None => Model::new(cfg.model().clone(), derive(cfg.seed, tag::INIT, 0))?,
    };
    if !model.is_seq2seq() {
        return Err(Error::Config("dagger needs a Seq2Seq architecture".into()));
    }
    let mut trainer = Trainer::new(model, cfg.dagger.fine_tune_config(&cfg.train), derive(cfg.seed, tag::BATCH, 0))?;
    let ckpt_dir = dir.join("checkpoints");
    if cfg.dagger.checkpoint_every > 0 {
        std::fs::create_dir_all(&ckpt_dir)?;
    }
    let (ds, log, stop) = dagger_run(&s, &mut trainer, &cfg.dagger, cfg.seed, Some(&ckpt_dir))?;
    save_dataset(&dir.join("dataset.jsonl"), &ds)?;
    write_log(&dir.join("log.jsonl"), &log)?;
    trainer.model.save(&dir.join("model.ckpt"))?;
    let eff = sample_efficiency_report(&log);
    write_csv(&dir.join("efficiency.csv"), &eff)?;
    write_json(&dir.join("efficiency.json"), &eff)?;
    let experts = log.iter().filter(|l| !l.success).count();
    Ok(serde_json::json!({
        "records": ds.len(),
        "expert_corrections": experts,
        "stop": stop,
        "interaction_steps": log.last().map_or(0, |l| l.cumulative_steps),
    }))
}

pub fn eval(cfg: &RunConfig, dir: &Path, expert: bool) -> Result<serde_json::Value> {
    let s = setup(cfg)?;
    let report: EvalReport = if expert {
        evaluate(&s, Policy::Oracle, cfg.n_episodes, cfg.seed)?
    } else {
        let model = checkpoint(cfg)?;
        evaluate(&s, Policy::Model(&model), cfg.n_episodes, cfg.seed)?
    };
    write_json(&dir.join("report.json"), &report)?;
    write_csv(&dir.join("episodes.csv"), &report.per_episode)?;
    Ok(serde_json::json!({ "success_rate": report.success_rate, "n_episodes": report.n_episodes }))
}

pub fn ablate(cfg: &RunConfig, dir: &Path) -> Result<serde_json::Value> {
    let s = setup(cfg)?;
    let pool = match &cfg.dataset {
        Some(p) => load_dataset(p)?,
        None => {
            let n = cfg.demo_counts.iter().copied().max().unwrap_or(0);
            let ds = collect_demos(&s, n, cfg.seed)?;
            save_dataset(&dir.join("pool.jsonl"), &ds)?;
            ds
        }
    };
    let rows = demo_ablation(&s, &pool, &cfg.demo_counts, cfg.trials, cfg.model(), &cfg.train, cfg.seed)?;
    write_csv(&dir.join("ablation.csv"), &rows)?;
    write_json(&dir.join("ablation.json"), &rows)?;
    Ok(serde_json::to_value(&rows)?)
}

pub fn compare(cfg: &RunConfig, dir: &Path) -> Result<serde_json::Value> {
    let s = setup(cfg)?;
    let ds = dataset(cfg)?;
    let rows = baseline_comparison(&s, &ds, &cfg.methods, cfg.model(), &cfg.train, &cfg.train_seeds, cfg.n_episodes, cfg.seed)?;
    write_csv(&dir.join("comparison.csv"), &rows)?;
    write_json(&dir.join("comparison.json"), &rows)?;
    let means: serde_json::Map<String, serde_json::Value> = comparison_means(&rows).into_iter().map(|(m, v)| (m.name().to_string(), v.into())).collect();
    Ok(serde_json::Value::Object(means))
}

pub fn probe(cfg: &RunConfig, dir: &Path) -> Result<serde_json::Value> {
    let s = setup(cfg)?;
    let model = checkpoint(cfg)?;
    let curve = state_estimation_curve(&s, &model, cfg.n_episodes, cfg.seed)?;
    write_csv(&dir.join("curve.csv"), &curve.points())?;
    write_json(&dir.join("curve.json"), &curve)?;
    Ok(serde_json::json!({
        "first": curve.mse.first(),
        "last": curve.mse.last(),
        "warning": curve.warning,
    }))
}

#[derive(Serialize)]
struct ReplayOutcome {
    record: usize,
    seed: u64,
    identical: bool,
}

pub fn replay(cfg: &RunConfig, dir: &Path, record: Option<usize>) -> Result<(serde_json::Value, bool)> {
    let s = setup(cfg)?;
    let ds = dataset(cfg)?;
    let picked: Vec<usize> = match record {
        Some(i) if i >= ds.len() => return Err(Error::Config(format!("record {i} out of range for {} records", ds.len()))),
        Some(i) => vec![i],
        None => (0..ds.len()).collect(),
    };
    let mut out = Vec::with_capacity(picked.len());
    for i in picked {
        let r = &ds.records[i];
        let ep = replay_record(&s, r)?;
        let file = std::fs::File::create(dir.join(format!("replay_{i:04}.jsonl")))?;
        write_replay(std::io::BufWriter::new(file), &ep.exploration.steps)?;
        out.push(ReplayOutcome { record: i, seed: r.seed, identical: ep.exploration == r.exploration && ep.hidden == r.hidden });
    }
    write_json(&dir.join("replay.json"), &out)?;
    let all = out.iter().all(|o| o.identical);
    let mismatched: Vec<usize> = out.iter().filter(|o| !o.identical).map(|o| o.record).collect();
    Ok((serde_json::json!({ "records": out.len(), "identical": all, "mismatched": mismatched }), all))
}
