//! `mia-audit` argument parsing.

use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::rundir::RunManifest;
use crate::stages::{run_stage, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "mia-audit",
    version,
    about = "White-box membership-inference audits of small models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML, dotted keys).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing run directory.
    #[arg(long)]
    pub force: bool,
    /// Extra `key=value` override; the value is read as TOML, else as a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct MopeOverrides {
    /// Overrides `mope.sigma`.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Overrides `mope.n`.
    #[arg(long)]
    pub n: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    Synth(Common),
    /// Train a model and save a checkpoint.
    Train(Common),
    /// Score members and nonmembers with every configured attack.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Overrides `attack.list` (comma separated).
        #[arg(long, value_delimiter = ',')]
        attack: Vec<String>,
        #[command(flatten)]
        mope: MopeOverrides,
        /// Overrides `model.checkpoint`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Recompute ROC curves and reports from a saved score table.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Overrides `eval.scores`.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Compare 2/sigma^2-scaled MoPe with exact Hessian traces.
    Hesslab {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mope: MopeOverrides,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Generate, rank and score candidate suffixes for the extraction benchmark.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Overrides `extract.attack` (loss or mope).
        #[arg(long)]
        attack: Option<String>,
        #[command(flatten)]
        mope: MopeOverrides,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Per-batch-group LOSS and MoPe after a single training pass.
    OrderStudy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mope: MopeOverrides,
    },
    /// Train and attack one model per `sweep.hidden` size.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        attack: Vec<String>,
        #[command(flatten)]
        mope: MopeOverrides,
    },
    /// Export z-scored, log-modulus LOSS-vs-MoPe points.
    Scatter {
        #[command(flatten)]
        common: Common,
        /// Overrides `scatter.scores`.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn path_value(p: &std::path::Path) -> String {
    p.to_string_lossy().into_owned()
}

/// The stage, its fully overridden config, and the run-directory options.
pub struct Invocation {
    pub stage: Stage,
    pub config: Config,
    pub out: PathBuf,
    pub force: bool,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth(c) | Command::Train(c) => c,
            Command::Attack { common, .. }
            | Command::Eval { common, .. }
            | Command::Hesslab { common, .. }
            | Command::Extract { common, .. }
            | Command::OrderStudy { common, .. }
            | Command::Sweep { common, .. }
            | Command::Scatter { common, .. } => common,
        }
    }

    pub fn stage(&self) -> Stage {
        match self {
            Command::Synth(_) => Stage::Synth,
            Command::Train(_) => Stage::Train,
            Command::Attack { .. } => Stage::Attack,
            Command::Eval { .. } => Stage::Eval,
            Command::Hesslab { .. } => Stage::Hesslab,
            Command::Extract { .. } => Stage::Extract,
            Command::OrderStudy { .. } => Stage::OrderStudy,
            Command::Sweep { .. } => Stage::Sweep,
            Command::Scatter { .. } => Stage::Scatter,
        }
    }

    pub fn invocation(&self) -> Result<Invocation> {
        let common = self.common();
        let mut config = Config::load(&common.config)?;
        for kv in &common.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
            config.set(k.trim(), parse_value(v.trim()));
        }
        if let Some(seed) = common.seed {
            config.set("seed", seed as i64);
        }
        let mope = |config: &mut Config, m: &MopeOverrides| {
            if let Some(s) = m.sigma {
                config.set("mope.sigma", s);
            }
            if let Some(n) = m.n {
                config.set("mope.n", n as i64);
            }
        };
        let attacks = |config: &mut Config, a: &[String]| {
            if !a.is_empty() {
                config.set(
                    "attack.list",
                    toml::Value::Array(a.iter().map(|s| s.clone().into()).collect()),
                );
            }
        };
        let model = |config: &mut Config, p: &Option<PathBuf>| {
            if let Some(p) = p {
                config.set("model.checkpoint", path_value(p));
            }
        };
        match self {
            Command::Synth(_) | Command::Train(_) => {}
            Command::Attack {
                attack,
                mope: m,
                model: p,
                ..
            } => {
                attacks(&mut config, attack);
                mope(&mut config, m);
                model(&mut config, p);
            }
            Command::Eval { scores, .. } => {
                if let Some(p) = scores {
                    config.set("eval.scores", path_value(p));
                }
            }
            Command::Hesslab {
                mope: m, model: p, ..
            } => {
                mope(&mut config, m);
                model(&mut config, p);
            }
            Command::Extract {
                attack,
                mope: m,
                model: p,
                ..
            } => {
                if let Some(a) = attack {
                    config.set("extract.attack", a.clone());
                }
                mope(&mut config, m);
                model(&mut config, p);
            }
            Command::OrderStudy { mope: m, .. } => mope(&mut config, m),
            Command::Sweep {
                attack, mope: m, ..
            } => {
                attacks(&mut config, attack);
                mope(&mut config, m);
            }
            Command::Scatter { scores, .. } => {
                if let Some(p) = scores {
                    config.set("scatter.scores", path_value(p));
                }
            }
        }
        Ok(Invocation {
            stage: self.stage(),
            config,
            out: common.out.clone(),
            force: common.force,
        })
    }
}

/// Runs an already-parsed command.
pub fn execute(cli: &Cli) -> Result<RunManifest> {
    let inv = cli.command.invocation().context("reading configuration")?;
    run_stage(inv.stage, &inv.config, &inv.out, inv.force)
}
