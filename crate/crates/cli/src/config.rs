//! Experiment configuration from a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use lsvi_core::agent::BarSigmaFloor;
use lsvi_core::harness::{AgentKind, ExperimentConfig, InstanceSpec};

/// Default output directory when neither the flag nor the file sets one.
pub const OUT_DIR_ENV: &str = "LSVI_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgentArg {
    Ucbpp,
    Baseline,
    Concurrent,
}

impl From<AgentArg> for AgentKind {
    fn from(a: AgentArg) -> Self {
        match a {
            AgentArg::Ucbpp => AgentKind::Ucbpp,
            AgentArg::Baseline => AgentKind::Baseline,
            AgentArg::Concurrent => AgentKind::Concurrent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FloorArg {
    AsWritten,
    SqrtNorm,
}

impl From<FloorArg> for BarSigmaFloor {
    fn from(f: FloorArg) -> Self {
        match f {
            FloorArg::AsWritten => BarSigmaFloor::AsWritten,
            FloorArg::SqrtNorm => BarSigmaFloor::SqrtNorm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InstanceKind {
    Gap,
    LowRank,
}

/// Instance generator parameters shared by `gen` and the experiment flags.
#[derive(Debug, Clone, Default, Args)]
pub struct InstanceArgs {
    /// Generator to use when the instance is given by parameters.
    #[arg(long, value_enum)]
    pub instance_kind: Option<InstanceKind>,
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub actions: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Target minimum gap (gap instances).
    #[arg(long)]
    pub delta_min: Option<f64>,
    /// Feature dimension (low-rank instances).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub instance_seed: Option<u64>,
}

impl InstanceArgs {
    fn any_set(&self) -> bool {
        self.instance_kind.is_some()
            || self.states.is_some()
            || self.actions.is_some()
            || self.horizon.is_some()
            || self.delta_min.is_some()
            || self.dim.is_some()
            || self.instance_seed.is_some()
    }

    /// Fill in `base` (if it is a generated instance) with the given flags.
    pub fn resolve(&self, base: Option<&InstanceSpec>) -> Result<InstanceSpec> {
        let (mut kind, mut s, mut a, mut h, mut delta, mut dim, mut seed) =
            (None, None, None, None, None, None, None);
        match base {
            Some(InstanceSpec::Gap {
                states,
                actions,
                horizon,
                delta_min,
                seed: sd,
            }) => {
                kind = Some(InstanceKind::Gap);
                (s, a, h, delta, seed) = (Some(*states), Some(*actions), Some(*horizon), Some(*delta_min), Some(*sd));
            }
            Some(InstanceSpec::LowRank {
                states,
                actions,
                horizon,
                dim: dm,
                seed: sd,
            }) => {
                kind = Some(InstanceKind::LowRank);
                (s, a, h, dim, seed) = (Some(*states), Some(*actions), Some(*horizon), Some(*dm), Some(*sd));
            }
            _ => {}
        }
        let kind = self.instance_kind.or(kind).unwrap_or(InstanceKind::Gap);
        let need = |v: Option<usize>, name: &str| v.with_context(|| format!("--{name} is required"));
        let states = need(self.states.or(s), "states")?;
        let actions = need(self.actions.or(a), "actions")?;
        let horizon = need(self.horizon.or(h), "horizon")?;
        let seed = self.instance_seed.or(seed).unwrap_or(0);
        Ok(match kind {
            InstanceKind::Gap => InstanceSpec::Gap {
                states,
                actions,
                horizon,
                delta_min: self.delta_min.or(delta).context("--delta-min is required")?,
                seed,
            },
            InstanceKind::LowRank => InstanceSpec::LowRank {
                states,
                actions,
                horizon,
                dim: need(self.dim.or(dim), "dim")?,
                seed,
            },
        })
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with an experiment configuration; flags override its fields.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Instance file written by `gen`.
    #[arg(long, conflicts_with = "instance_kind")]
    pub instance: Option<PathBuf>,
    #[command(flatten)]
    pub generated: InstanceArgs,
    #[arg(long, value_enum)]
    pub agent: Option<AgentArg>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Seeds as a list (`0,3,7`) or a half-open range (`0..10`).
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
    #[arg(long)]
    pub c_beta: Option<f64>,
    #[arg(long)]
    pub c_bar_beta: Option<f64>,
    #[arg(long)]
    pub c_tilde_beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_enum)]
    pub bar_sigma_floor: Option<FloorArg>,
    /// Number of concurrent agents.
    #[arg(long)]
    pub agents: Option<usize>,
    /// Stop a concurrent run once the mixture gap is at most this.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub track_optimism: bool,
    #[arg(long)]
    pub audit_regression: bool,
    /// Output directory [default: $LSVI_OUT_DIR].
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

pub fn parse_seeds(text: &str) -> Result<SeedList, String> {
    let text = text.trim();
    let seeds: Vec<u64> = if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
        let hi: u64 = hi.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
        (lo..hi).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(|e| format!("bad seed {s:?}: {e}")))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(SeedList(seeds))
}

pub fn load_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl ConfigArgs {
    /// File config (if any) with every given flag applied on top.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let base = self.config.as_deref().map(load_file).transpose()?;
        let instance = if let Some(path) = &self.instance {
            InstanceSpec::File { path: path.clone() }
        } else if self.generated.any_set() {
            self.generated.resolve(base.as_ref().map(|c| &c.instance))?
        } else if let Some(b) = &base {
            b.instance.clone()
        } else {
            bail!("no instance given: use --config, --instance or the generator flags");
        };
        let mut cfg = match base {
            Some(mut b) => {
                b.instance = instance;
                b
            }
            None => ExperimentConfig::new(instance, AgentKind::Ucbpp, 1_000, vec![0]),
        };
        if let Some(a) = self.agent {
            cfg.agent = a.into();
        }
        if let Some(k) = self.episodes {
            cfg.episodes = k;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.0.clone();
        }
        if let Some(c) = self.c_beta {
            cfg.c_beta = c;
        }
        if let Some(c) = self.c_bar_beta {
            cfg.c_bar_beta = c;
        }
        if let Some(c) = self.c_tilde_beta {
            cfg.c_tilde_beta = c;
        }
        if self.lambda.is_some() {
            cfg.lambda = self.lambda;
        }
        if self.delta.is_some() {
            cfg.delta = self.delta;
        }
        if let Some(f) = self.bar_sigma_floor {
            cfg.bar_sigma_floor = f.into();
        }
        if let Some(m) = self.agents {
            cfg.agents = m;
        }
        if self.epsilon.is_some() {
            cfg.epsilon = self.epsilon;
        }
        if self.max_rounds.is_some() {
            cfg.max_rounds = self.max_rounds;
        }
        cfg.track_optimism |= self.track_optimism;
        cfg.audit_regression |= self.audit_regression;
        cfg.output = self
            .output
            .clone()
            .or(cfg.output)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from));
        cfg.validate()?;
        Ok(cfg)
    }
}
