//! Success-rate evaluation and experiment tables.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::features::{encoder_tokens, hidden_to_model};
use crate::models::{Arch, Model, ModelConfig};
use crate::pipeline::{attempt, train_from_scratch, Dataset, IterationLog, Policy, Setup, TrainConfig};
use crate::seeds::{derive, tag};

/// Outcome of one evaluation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub success: bool,
    /// Executed skill steps.
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub success_rate: f64,
    pub n_episodes: usize,
    pub per_episode: Vec<EpisodeResult>,
    /// Exploration plus executed skill steps over all episodes.
    pub interaction_steps_total: usize,
}

impl EvalReport {
    /// Builds a report from episode outcomes; `exploration_len` steps precede each skill.
    pub fn from_episodes(per_episode: Vec<EpisodeResult>, exploration_len: usize) -> Result<Self> {
        if per_episode.is_empty() {
            return Err(Error::Contract("a report needs at least one episode".into()));
        }
        let n = per_episode.len();
        let successes = per_episode.iter().filter(|e| e.success).count();
        let interaction_steps_total = per_episode.iter().map(|e| exploration_len + e.steps).sum();
        Ok(Self { success_rate: successes as f64 / n as f64, n_episodes: n, per_episode, interaction_steps_total })
    }

    pub fn successes(&self) -> usize {
        self.per_episode.iter().filter(|e| e.success).count()
    }
}

/// Seed of evaluation episode `i` under `eval_seed`; shared by every method.
pub fn eval_episode_seed(eval_seed: u64, i: usize) -> u64 {
    derive(eval_seed, tag::EVAL, i as u64)
}

/// Runs `n` episodes with random hidden poses and counts successes.
pub fn evaluate(setup: &Setup, policy: Policy, n: usize, eval_seed: u64) -> Result<EvalReport> {
    let mut per_episode = Vec::with_capacity(n);
    let mut t = 0;
    for i in 0..n {
        let ep = setup.explore(eval_episode_seed(eval_seed, i))?;
        t = ep.exploration.len();
        let (_, exec) = attempt(setup, policy, &ep)?;
        per_episode.push(EpisodeResult { seed: ep.seed, success: exec.success, steps: exec.steps });
    }
    EvalReport::from_episodes(per_episode, t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub demos: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
}

/// Trains from scratch on random subsets of `pool` and evaluates each on the
/// same `trials` episodes.
pub fn demo_ablation(setup: &Setup, pool: &Dataset, counts: &[usize], trials: usize, model_cfg: &ModelConfig, cfg: &TrainConfig, seed: u64) -> Result<Vec<AblationRow>> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if max > pool.len() {
        return Err(Error::Contract(format!("pool of {} records is smaller than {max}", pool.len())));
    }
    let mut rows = Vec::with_capacity(counts.len());
    for (ci, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::Contract("demo counts must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, tag::SUBSET, ci as u64));
        let mut idx = sample_indices(&mut rng, pool.len(), count).into_vec();
        idx.sort_unstable();
        let (model, _) = train_from_scratch(setup, &pool.subset(&idx), model_cfg, cfg, derive(seed, tag::INIT, ci as u64))?;
        let report = evaluate(setup, Policy::Model(&model), trials, seed)?;
        rows.push(AblationRow { demos: count, trials, successes: report.successes(), success_rate: report.success_rate });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationCurve {
    /// Mean squared error between `z` and the normalized hidden pose after each exploration step.
    pub mse: Vec<f64>,
    pub n_episodes: usize,
    /// Set when the model was not trained with latent supervision.
    pub warning: Option<String>,
}

/// Encodes every exploration prefix and averages the latent error per step.
pub fn state_estimation_curve(setup: &Setup, model: &Model, n: usize, seed: u64) -> Result<EstimationCurve> {
    if n == 0 {
        return Err(Error::Contract("at least one episode is required".into()));
    }
    let scale = setup.sim.cfg.workspace.scale();
    let mut mse: Vec<f64> = Vec::new();
    for i in 0..n {
        let ep = setup.explore(derive(seed, tag::PROBE, i as u64))?;
        let raw = ep.exploration.tokens();
        let e = hidden_to_model(&ep.hidden, &scale);
        if mse.is_empty() {
            mse = vec![0.0; raw.len()];
        }
        for t in 1..=raw.len().min(mse.len()) {
            let z = model.encode(&encoder_tokens(&raw[..t]))?.z;
            let err: f64 = z.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 3.0;
            mse[t - 1] += err / n as f64;
        }
    }
    let warning = (!model.latent_supervised).then(|| "model was trained without latent supervision".to_string());
    Ok(EstimationCurve { mse, n_episodes: n, warning })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub episode: usize,
    pub cumulative_steps: usize,
    pub demonstrations: usize,
    pub expert_corrections: usize,
    /// Success over the last ten episodes of the run.
    pub rolling_success: f64,
    pub eval_success: Option<f64>,
}

/// Interactions versus success from a DAgger log.
pub fn sample_efficiency_report(log: &[IterationLog]) -> Vec<EfficiencyRow> {
    let mut experts = 0;
    log.iter()
        .enumerate()
        .map(|(i, l)| {
            if !l.success {
                experts += 1;
            }
            let window = &log[i.saturating_sub(9)..=i];
            let rolling = window.iter().filter(|w| w.success).count() as f64 / window.len() as f64;
            EfficiencyRow {
                episode: i + 1,
                cumulative_steps: l.cumulative_steps,
                demonstrations: l.dataset_len,
                expert_corrections: experts,
                rolling_success: rolling,
                eval_success: l.eval_success,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "Seq2Seq")]
    Seq2Seq,
    #[serde(rename = "Seq2Seq-Oracle")]
    Seq2SeqOracle,
    #[serde(rename = "Seq2Seq-LSTM")]
    Seq2SeqLstm,
    #[serde(rename = "BC-LSTM")]
    BcLstm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Seq2Seq, Method::Seq2SeqOracle, Method::Seq2SeqLstm, Method::BcLstm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Seq2Seq => "Seq2Seq",
            Method::Seq2SeqOracle => "Seq2Seq-Oracle",
            Method::Seq2SeqLstm => "Seq2Seq-LSTM",
            Method::BcLstm => "BC-LSTM",
        }
    }

    /// Architecture and training mode of the method.
    pub fn configure(self, base: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let arch = match self {
            Method::Seq2Seq | Method::Seq2SeqOracle => Arch::Transformer,
            Method::Seq2SeqLstm => Arch::Lstm,
            Method::BcLstm => Arch::BcLstm,
        };
        let m = ModelConfig { arch, ..base.clone() };
        let t = TrainConfig { oracle: self == Method::Seq2SeqOracle, ..train.clone() };
        (m, t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub train_seed: u64,
    pub report: EvalReport,
}

/// Trains every method on the same dataset for each training seed and
/// evaluates all of them on the same episodes.
pub fn baseline_comparison(setup: &Setup, ds: &Dataset, methods: &[Method], base: &ModelConfig, train: &TrainConfig, train_seeds: &[u64], n_eval: usize, eval_seed: u64) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for &seed in train_seeds {
        for &method in methods {
            let (m, t) = method.configure(base, train);
            let (model, _) = train_from_scratch(setup, ds, &m, &t, seed)?;
            let report = evaluate(setup, Policy::Model(&model), n_eval, eval_seed)?;
            rows.push(ComparisonRow { method, train_seed: seed, report });
        }
    }
    Ok(rows)
}

/// Mean success rate of each method over its rows.
pub fn comparison_means(rows: &[ComparisonRow]) -> Vec<(Method, f64)> {
    let mut out: Vec<(Method, f64)> = Vec::new();
    for m in Method::ALL {
        let rates: Vec<f64> = rows.iter().filter(|r| r.method == m).map(|r| r.report.success_rate).collect();
        if !rates.is_empty() {
            out.push((m, rates.iter().sum::<f64>() / rates.len() as f64));
        }
    }
    out
}

/// Rows that can be written as CSV.
pub trait CsvTable {
    fn header() -> &'static str;
    fn row(&self) -> String;
}

impl CsvTable for EpisodeResult {
    fn header() -> &'static str {
        "seed,success,steps"
    }
    fn row(&self) -> String {
        format!("{},{},{}", self.seed, u8::from(self.success), self.steps)
    }
}

impl CsvTable for AblationRow {
    fn header() -> &'static str {
        "demos,trials,successes,success_rate"
    }
    fn row(&self) -> String {
        format!("{},{},{},{}", self.demos, self.trials, self.successes, self.success_rate)
    }
}

impl CsvTable for EfficiencyRow {
    fn header() -> &'static str {
        "episode,cumulative_steps,demonstrations,expert_corrections,rolling_success,eval_success"
    }
    fn row(&self) -> String {
        let eval = self.eval_success.map_or(String::new(), |v| v.to_string());
        format!("{},{},{},{},{},{}", self.episode, self.cumulative_steps, self.demonstrations, self.expert_corrections, self.rolling_success, eval)
    }
}

impl CsvTable for ComparisonRow {
    fn header() -> &'static str {
        "method,train_seed,successes,n_episodes,success_rate"
    }
    fn row(&self) -> String {
        format!("{},{},{},{},{}", self.method.name(), self.train_seed, self.report.successes(), self.report.n_episodes, self.report.success_rate)
    }
}

/// One `(step, mse)` row of an estimation curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mse: f64,
}

impl EstimationCurve {
    pub fn points(&self) -> Vec<CurvePoint> {
        self.mse.iter().enumerate().map(|(i, &mse)| CurvePoint { step: i + 1, mse }).collect()
    }
}

impl CsvTable for CurvePoint {
    fn header() -> &'static str {
        "step,mse"
    }
    fn row(&self) -> String {
        format!("{},{}", self.step, self.mse)
    }
}

pub fn write_csv<T: CsvTable>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", T::header())?;
    for r in rows {
        writeln!(w, "{}", r.row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_arithmetic_is_exact() {
        let eps = vec![
            EpisodeResult { seed: 1, success: true, steps: 10 },
            EpisodeResult { seed: 2, success: false, steps: 36 },
            EpisodeResult { seed: 3, success: true, steps: 12 },
        ];
        let r = EvalReport::from_episodes(eps, 69).unwrap();
        assert_eq!(r.success_rate, 2.0 / 3.0);
        assert_eq!(r.interaction_steps_total, 3 * 69 + 58);
        assert!(EvalReport::from_episodes(Vec::new(), 69).is_err());
    }

    #[test]
    fn efficiency_counts_corrections() {
        let mk = |i: usize, success: bool, cum: usize| IterationLog {
            iteration: i,
            seed: 0,
            template_id: 0,
            success,
            source: if success { crate::pipeline::Source::Robot } else { crate::pipeline::Source::Expert },
            dataset_len: i + 1,
            streak: 0,
            env_steps: 0,
            cumulative_steps: cum,
            train_loss: Vec::new(),
            eval_success: None,
        };
        let rows = sample_efficiency_report(&[mk(0, false, 90), mk(1, true, 170)]);
        assert_eq!(rows[1].expert_corrections, 1);
        assert_eq!(rows[1].rolling_success, 0.5);
        assert!(rows[0].cumulative_steps < rows[1].cumulative_steps);
    }
}
