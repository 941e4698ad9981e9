//! Run configuration: JSON file, flag overrides and the resolved form persisted with each run.

use std::path::{Path, PathBuf};

use seqil::eval::Method;
use seqil::models::{Arch, ModelConfig};
use seqil::pipeline::{DaggerConfig, TrainConfig};
use seqil::sim::EnvConfig;
use seqil::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a command needs. Environment and model settings come either
/// inline or from a separate file, never both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub env_config: Option<PathBuf>,
    pub env: Option<EnvConfig>,
    pub model_config: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub dagger: DaggerConfig,
    /// Template file; built from the seed when absent.
    pub templates: Option<PathBuf>,
    pub n_templates: usize,
    pub skill_len: usize,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub n_episodes: usize,
    pub demo_counts: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub train_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            env_config: None,
            env: None,
            model_config: None,
            model: None,
            train: TrainConfig::default(),
            dagger: DaggerConfig::default(),
            templates: None,
            n_templates: seqil::experts::DEFAULT_TEMPLATE_COUNT,
            skill_len: seqil::experts::DEFAULT_SKILL_LEN,
            dataset: None,
            checkpoint: None,
            n_episodes: 100,
            demo_counts: vec![5, 10, 25, 50, 100],
            trials: 45,
            methods: Method::ALL.to_vec(),
            train_seeds: vec![0, 1, 2],
        }
    }
}

/// Values given on the command line; each replaces its config counterpart.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub budget: Option<usize>,
    pub episodes: Option<usize>,
    pub arch: Option<Arch>,
    pub oracle: bool,
    pub noise: Option<bool>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub steps: Option<usize>,
    pub counts: Option<Vec<usize>>,
    pub trials: Option<usize>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Applies overrides, loads referenced config files and makes every path
    /// absolute. The result has inline `env` and `model` and no config paths.
    pub fn resolve(mut self, o: &Overrides, config_dir: &Path, cwd: &Path) -> Result<Self> {
        if self.env.is_some() && self.env_config.is_some() {
            return Err(Error::Config("give either env or env_config, not both".into()));
        }
        if self.model.is_some() && self.model_config.is_some() {
            return Err(Error::Config("give either model or model_config, not both".into()));
        }
        let from_file = |p: &Option<PathBuf>| p.as_ref().map(|p| absolute(config_dir, p));
        let mut env = match from_file(&self.env_config) {
            Some(p) => EnvConfig::load(&p)?,
            None => self.env.take().unwrap_or_default(),
        };
        let mut model: ModelConfig = match from_file(&self.model_config) {
            Some(p) => read_json(&p)?,
            None => self.model.take().unwrap_or_default(),
        };
        self.templates = from_file(&self.templates);
        self.dataset = from_file(&self.dataset);
        self.checkpoint = from_file(&self.checkpoint);
        self.out = absolute(config_dir, &self.out);

        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.out = absolute(cwd, v);
        }
        if let Some(v) = o.budget {
            self.dagger.budget = v;
        }
        if let Some(v) = o.episodes {
            self.n_episodes = v;
        }
        if let Some(v) = o.arch {
            model.arch = v;
        }
        if o.oracle {
            self.train.oracle = true;
        }
        if let Some(v) = o.noise {
            env.noise.enabled = v;
        }
        if let Some(v) = &o.dataset {
            self.dataset = Some(absolute(cwd, v));
        }
        if let Some(v) = &o.checkpoint {
            self.checkpoint = Some(absolute(cwd, v));
        }
        if let Some(v) = &o.templates {
            self.templates = Some(absolute(cwd, v));
        }
        if let Some(v) = o.steps {
            self.train.steps = v;
        }
        if let Some(v) = &o.counts {
            self.demo_counts = v.clone();
        }
        if let Some(v) = o.trials {
            self.trials = v;
        }

        env.validate()?;
        model.validate()?;
        self.train.validate()?;
        if self.train.oracle && model.arch == Arch::BcLstm {
            return Err(Error::Config("oracle supervision needs a Seq2Seq architecture".into()));
        }
        if self.n_templates == 0 || self.skill_len < 2 {
            return Err(Error::Config("need at least one template and a skill length of at least 2".into()));
        }
        model.max_m = self.skill_len;
        self.env_config = None;
        self.model_config = None;
        self.env = Some(env);
        self.model = Some(model);
        Ok(self)
    }

    pub fn env(&self) -> &EnvConfig {
        self.env.as_ref().expect("resolved config")
    }

    pub fn model(&self) -> &ModelConfig {
        self.model.as_ref().expect("resolved config")
    }
}
