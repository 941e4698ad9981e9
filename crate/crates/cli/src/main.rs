//! `seqil`: collect demonstrations, train, run incremental collection and evaluate.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqil::models::Arch;
use seqil::{Error, Result};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "seqil", version, about = "Sequence-to-sequence imitation learning experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parent directory of run directories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sensor noise.
    #[arg(long, global = true, value_enum)]
    noise: Option<Switch>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Transformer,
    Lstm,
    Bc,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Transformer => Arch::Transformer,
            ArchArg::Lstm => Arch::Lstm,
            ArchArg::Bc => Arch::BcLstm,
        }
    }
}

#[derive(Args, Default)]
struct ModelArgs {
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    /// Supervise the latent with the hidden pose.
    #[arg(long)]
    oracle: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build exploration templates.
    CollectTemplates,
    /// Record oracle demonstrations.
    CollectDemos {
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Train a model from scratch on a dataset.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Incremental collection with expert corrections.
    Dagger {
        #[arg(long)]
        budget: Option<usize>,
        /// Start from this checkpoint instead of a fresh model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Success rate of a checkpoint, or of the oracle with `--expert`.
    Eval {
        #[arg(long, conflicts_with = "expert")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        expert: bool,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Success against the number of training demonstrations.
    AblateDemos {
        /// Pool of demonstrations; collected when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train every method on one dataset and evaluate on shared episodes.
    Compare {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Hidden-pose estimation error after each exploration step.
    ProbeEstimate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Re-execute dataset records and compare observations.
    Replay {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        record: Option<usize>,
        #[arg(long)]
        templates: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::CollectTemplates => "collect-templates",
            Command::CollectDemos { .. } => "collect-demos",
            Command::Train { .. } => "train",
            Command::Dagger { .. } => "dagger",
            Command::Eval { .. } => "eval",
            Command::AblateDemos { .. } => "ablate-demos",
            Command::Compare { .. } => "compare",
            Command::ProbeEstimate { .. } => "probe-estimate",
            Command::Replay { .. } => "replay",
        }
    }

    fn overrides(&self, common: &Common) -> Overrides {
        let mut o = Overrides {
            seed: common.seed,
            out: common.out.clone(),
            noise: common.noise.map(|n| matches!(n, Switch::On)),
            ..Overrides::default()
        };
        let model = |o: &mut Overrides, m: &ModelArgs| {
            o.arch = m.arch.map(Arch::from);
            o.oracle = m.oracle;
        };
        match self {
            Command::CollectTemplates => {}
            Command::CollectDemos { episodes, templates } => {
                o.episodes = *episodes;
                o.templates = templates.clone();
            }
            Command::Train { dataset, steps, model: m } => {
                o.dataset = dataset.clone();
                o.steps = *steps;
                model(&mut o, m);
            }
            Command::Dagger { budget, checkpoint, model: m } => {
                o.budget = *budget;
                o.checkpoint = checkpoint.clone();
                model(&mut o, m);
            }
            Command::Eval { checkpoint, episodes, .. } | Command::ProbeEstimate { checkpoint, episodes } => {
                o.checkpoint = checkpoint.clone();
                o.episodes = *episodes;
            }
            Command::AblateDemos { dataset, counts, trials, steps, model: m } => {
                o.dataset = dataset.clone();
                o.counts = counts.clone();
                o.trials = *trials;
                o.steps = *steps;
                model(&mut o, m);
            }
            Command::Compare { dataset, episodes, steps } => {
                o.dataset = dataset.clone();
                o.episodes = *episodes;
                o.steps = *steps;
            }
            Command::Replay { dataset, templates, .. } => {
                o.dataset = dataset.clone();
                o.templates = templates.clone();
            }
        }
        o
    }
}

/// Creates `<out>/<UTC timestamp>-seed<seed>`, adding a counter when the name is taken.
fn run_dir(out: &Path, seed: u64) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    std::fs::create_dir_all(out)?;
    for n in 0.. {
        let name = if n == 0 { format!("{stamp}-seed{seed}") } else { format!("{stamp}-seed{seed}-{n}") };
        let dir = out.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("unbounded search")
}

fn run(cli: &Cli) -> Result<bool> {
    let cwd = std::env::current_dir()?;
    let (file_cfg, config_dir) = match &cli.common.config {
        Some(p) => {
            let p = if p.is_absolute() { p.clone() } else { cwd.join(p) };
            (RunConfig::load(&p)?, p.parent().map_or_else(|| cwd.clone(), Path::to_path_buf))
        }
        None => (RunConfig::default(), cwd.clone()),
    };
    let cfg = file_cfg.resolve(&cli.command.overrides(&cli.common), &config_dir, &cwd)?;
    let dir = run_dir(&cfg.out, cfg.seed)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let mut ok = true;
    let result = match &cli.command {
        Command::CollectTemplates => commands::collect_templates(&cfg, &dir)?,
        Command::CollectDemos { .. } => commands::demos(&cfg, &dir)?,
        Command::Train { .. } => commands::train(&cfg, &dir)?,
        Command::Dagger { .. } => commands::dagger(&cfg, &dir)?,
        Command::Eval { expert, .. } => commands::eval(&cfg, &dir, *expert)?,
        Command::AblateDemos { .. } => commands::ablate(&cfg, &dir)?,
        Command::Compare { .. } => commands::compare(&cfg, &dir)?,
        Command::ProbeEstimate { .. } => commands::probe(&cfg, &dir)?,
        Command::Replay { record, .. } => {
            let (v, identical) = commands::replay(&cfg, &dir, *record)?;
            ok = identical;
            v
        }
    };
    let summary = commands::Summary { command: cli.command.name(), run_dir: dir, result };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(ok)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Contract(_) => "contract",
        Error::Parse { .. } => "parse",
        Error::Version { .. } => "version",
        Error::Autodiff(_) => "numeric",
        Error::Json(_) => "json",
        Error::Io(_) => "io",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}", serde_json::json!({ "error": { "kind": "mismatch", "command": cli.command.name(), "message": "replayed observations differ from the dataset" } }));
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": { "kind": error_kind(&e), "command": cli.command.name(), "message": e.to_string() } }));
            ExitCode::from(1)
        }
    }
}
