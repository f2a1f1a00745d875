//! Experiment orchestration: configs, per-seed runs, metrics and audits.

mod audit;
mod export;
mod metrics;
mod recorder;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use audit::{audit_all, surrogate_bonus_audit, AuditParams, BonusAudit};
pub use export::{
    metrics_csv, parse_metrics, parse_metrics_csv, parse_trace_csv, trace_csv, write_run, EpisodeRows, RunFiles, RunSummary,
    SUMMARY_FORMAT, SUMMARY_VERSION,
};
pub use metrics::{gap_bucket_update, threshold, GapTable, OptimismStats, RunMetrics};
pub use recorder::{Recorder, RecorderOptions, TraceEntry, OPTIMISM_TOL};

use crate::agent::{AgentConfig, BarSigmaFloor, LsviUcbPlusPlus, RegressionAudit};
use crate::baseline::{BaselineConfig, LsviUcb};
use crate::concurrent::{ConcurrentConfig, ConcurrentRunner};
use crate::env::{make_gap_instance, make_low_rank_instance, FeatureMap, LinearMdp, Transition};
use crate::error::{invalid, Error, Result};
use crate::learner::{Learner, StepRecord};
use crate::oracle::{optimal_values, OracleTables};
use crate::rng::{agent_stream, StreamRng};

pub const CHECKPOINT_FORMAT: &str = "lsvi-workbench/session-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InstanceSpec {
    File {
        path: PathBuf,
    },
    Gap {
        states: usize,
        actions: usize,
        horizon: usize,
        delta_min: f64,
        seed: u64,
    },
    LowRank {
        states: usize,
        actions: usize,
        horizon: usize,
        dim: usize,
        seed: u64,
    },
}

impl InstanceSpec {
    pub fn build(&self) -> Result<LinearMdp> {
        match *self {
            InstanceSpec::File { ref path } => LinearMdp::load(path),
            InstanceSpec::Gap {
                states,
                actions,
                horizon,
                delta_min,
                seed,
            } => make_gap_instance(states, actions, horizon, delta_min, seed),
            InstanceSpec::LowRank {
                states,
                actions,
                horizon,
                dim,
                seed,
            } => make_low_rank_instance(states, actions, horizon, dim, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Ucbpp,
    Baseline,
    Concurrent,
}

fn one() -> f64 {
    1.0
}

fn one_agent() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub agent: AgentKind,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub c_beta: f64,
    #[serde(default = "one")]
    pub c_bar_beta: f64,
    #[serde(default = "one")]
    pub c_tilde_beta: f64,
    /// Defaults to `1/H²` (LSVI-UCB++) or `1` (baseline).
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Defaults to `1/(18·H·K)`.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub bar_sigma_floor: BarSigmaFloor,
    #[serde(default = "one_agent")]
    pub agents: usize,
    /// Concurrent runs stop once the mixture gap is at most this; otherwise
    /// they stop after `episodes` fed episodes.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub max_rounds: Option<usize>,
    #[serde(default)]
    pub track_optimism: bool,
    #[serde(default)]
    pub audit_regression: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(instance: InstanceSpec, agent: AgentKind, episodes: usize, seeds: Vec<u64>) -> Self {
        Self {
            instance,
            agent,
            episodes,
            seeds,
            c_beta: 1.0,
            c_bar_beta: 1.0,
            c_tilde_beta: 1.0,
            lambda: None,
            delta: None,
            bar_sigma_floor: BarSigmaFloor::AsWritten,
            agents: 1,
            epsilon: None,
            max_rounds: None,
            track_optimism: false,
            audit_regression: false,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(invalid("at least one seed is required"));
        }
        if self.agent == AgentKind::Concurrent && self.agents == 0 {
            return Err(invalid("concurrent runs need at least one agent"));
        }
        Ok(())
    }

    pub fn agent_config(&self, horizon: usize) -> AgentConfig {
        let mut cfg = AgentConfig::new(horizon, self.episodes).with_multipliers(
            self.c_beta,
            self.c_bar_beta,
            self.c_tilde_beta,
        );
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        cfg.bar_sigma_floor = self.bar_sigma_floor;
        cfg.audit_regression = self.audit_regression;
        cfg
    }

    pub fn baseline_config(&self, horizon: usize) -> BaselineConfig {
        let mut cfg = BaselineConfig::new(horizon, self.episodes);
        cfg.c_beta = self.c_beta;
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        cfg
    }

    pub fn concurrent_config(&self, horizon: usize) -> ConcurrentConfig {
        ConcurrentConfig {
            agents: self.agents,
            epsilon: self.epsilon.unwrap_or(f64::MIN_POSITIVE),
            max_rounds: self.max_rounds.unwrap_or(usize::MAX),
            agent: self.agent_config(horizon),
        }
    }

    fn recorder_options(&self) -> RecorderOptions {
        RecorderOptions {
            track_optimism: self.track_optimism,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcurrentOutcome {
    pub agents: usize,
    pub rounds: usize,
    /// `None` when no episode was fed.
    pub mixture_gap: Option<f64>,
    pub reached_epsilon: bool,
}

/// Everything a finished run produces for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: RunMetrics,
    pub trace: Vec<TraceEntry>,
    pub audits: Vec<BonusAudit>,
    pub regression: Option<RegressionAudit>,
    pub concurrent: Option<ConcurrentOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum AnyLearner {
    Ucbpp(LsviUcbPlusPlus),
    Baseline(LsviUcb),
}

impl Learner for AnyLearner {
    fn begin_episode<F: FeatureMap>(&mut self, env: &F, k: usize) -> Result<bool> {
        match self {
            AnyLearner::Ucbpp(l) => l.begin_episode(env, k),
            AnyLearner::Baseline(l) => l.begin_episode(env, k),
        }
    }

    fn q_value<F: FeatureMap>(&self, env: &F, h: usize, s: usize, a: usize) -> f64 {
        match self {
            AnyLearner::Ucbpp(l) => l.q_value(env, h, s, a),
            AnyLearner::Baseline(l) => l.q_value(env, h, s, a),
        }
    }

    fn q_lower<F: FeatureMap>(&self, env: &F, h: usize, s: usize, a: usize) -> Option<f64> {
        match self {
            AnyLearner::Ucbpp(l) => l.q_lower(env, h, s, a),
            AnyLearner::Baseline(l) => l.q_lower(env, h, s, a),
        }
    }

    fn observe<F: FeatureMap>(&mut self, env: &F, k: usize, t: &Transition) -> Result<StepRecord> {
        match self {
            AnyLearner::Ucbpp(l) => Learner::observe(l, env, k, t),
            AnyLearner::Baseline(l) => l.observe(env, k, t),
        }
    }

    fn bonus_radius(&self) -> f64 {
        match self {
            AnyLearner::Ucbpp(l) => l.bonus_radius(),
            AnyLearner::Baseline(l) => l.bonus_radius(),
        }
    }

    fn switch_count(&self) -> usize {
        match self {
            AnyLearner::Ucbpp(l) => l.switch_count(),
            AnyLearner::Baseline(l) => l.switch_count(),
        }
    }
}

impl AnyLearner {
    fn lambda(&self) -> f64 {
        match self {
            AnyLearner::Ucbpp(l) => l.config().lambda,
            AnyLearner::Baseline(l) => l.config().lambda,
        }
    }
}

/// A resumable single-learner run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSession {
    seed: u64,
    budget: usize,
    episode: usize,
    learner: AnyLearner,
    rng: StreamRng,
    recorder: Recorder,
}

#[derive(Serialize, Deserialize)]
struct SessionCheckpoint<T> {
    format: String,
    version: u32,
    session: T,
}

impl RunSession {
    pub fn new(cfg: &ExperimentConfig, mdp: &LinearMdp, oracle: &OracleTables, seed: u64) -> Result<Self> {
        let horizon = mdp.horizon();
        let learner = match cfg.agent {
            AgentKind::Ucbpp => AnyLearner::Ucbpp(LsviUcbPlusPlus::new(cfg.agent_config(horizon), mdp)?),
            AgentKind::Baseline => AnyLearner::Baseline(LsviUcb::new(cfg.baseline_config(horizon), mdp)?),
            AgentKind::Concurrent => {
                return Err(invalid("concurrent runs are driven by ConcurrentRunner"));
            }
        };
        Ok(Self {
            seed,
            budget: cfg.episodes,
            episode: 0,
            learner,
            rng: agent_stream(seed, 0),
            recorder: Recorder::new(mdp, oracle, cfg.recorder_options())?,
        })
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn learner(&self) -> &AnyLearner {
        &self.learner
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.recorder.metrics
    }

    pub fn is_done(&self) -> bool {
        self.episode >= self.budget
    }

    /// Play one episode under the learner's current greedy policy.
    pub fn step(&mut self, mdp: &LinearMdp, oracle: &OracleTables) -> Result<()> {
        let k = self.episode + 1;
        let switched = self.learner.begin_episode(mdp, k)?;
        self.recorder.begin_episode(mdp, oracle, &self.learner, k, switched)?;
        let beta = self.learner.bonus_radius();
        let horizon = mdp.horizon() as f64;
        let mut s = mdp.initial_state();
        for h in 0..mdp.horizon() {
            let a = self.recorder.action(h, s);
            let q_opt = self.learner.q_value(mdp, h, s, a);
            let t = mdp.sample_step(h, s, a, &mut self.rng);
            let rec = self.learner.observe(mdp, k, &t)?;
            self.recorder.record_step(k, q_opt, beta, horizon, &rec);
            s = t.s_next;
        }
        self.recorder.end_episode(mdp, oracle);
        self.episode = k;
        Ok(())
    }

    /// Play episodes until `until` (capped at the budget) have been completed.
    pub fn run_to(&mut self, mdp: &LinearMdp, oracle: &OracleTables, until: usize) -> Result<()> {
        while self.episode < until.min(self.budget) {
            self.step(mdp, oracle)?;
        }
        Ok(())
    }

    pub fn finish(self, mdp: &LinearMdp) -> Result<SeedRun> {
        let params = AuditParams {
            dim: mdp.dim(),
            horizon: mdp.horizon(),
            lambda: self.learner.lambda(),
            beta: self.learner.bonus_radius(),
            episodes: self.budget,
        };
        let buckets = self.recorder.metrics.gap_counts.buckets();
        let audits = audit_all(mdp, &params, buckets, &self.recorder.trace)?;
        let regression = match &self.learner {
            AnyLearner::Ucbpp(l) if l.config().audit_regression => Some(l.regression_audit()),
            _ => None,
        };
        Ok(SeedRun {
            seed: self.seed,
            metrics: self.recorder.metrics,
            trace: self.recorder.trace,
            audits,
            regression,
            concurrent: None,
        })
    }

    pub fn to_checkpoint(&self) -> Result<String> {
        Ok(serde_json::to_string(&SessionCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            session: self,
        })?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let ck: SessionCheckpoint<Self> = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Ok(ck.session)
    }
}

/// Run a concurrent experiment for one seed.
///
/// With `epsilon` set this stops at the first round whose mixture gap is at
/// most `epsilon`; otherwise it stops once `episodes` episodes have been fed.
pub fn run_concurrent(cfg: &ExperimentConfig, mdp: &LinearMdp, oracle: &OracleTables, seed: u64) -> Result<SeedRun> {
    let ccfg = cfg.concurrent_config(mdp.horizon());
    let mut runner = ConcurrentRunner::new(&ccfg, mdp, seed)?;
    let opts = cfg.recorder_options();
    let (metrics, trace, outcome) = match cfg.epsilon {
        Some(eps) => {
            let (rounds, gap, recorder) = runner.run_until_epsilon(mdp, oracle, eps, ccfg.max_rounds, opts)?;
            (
                recorder.metrics,
                recorder.trace,
                ConcurrentOutcome {
                    agents: ccfg.agents,
                    rounds,
                    mixture_gap: Some(gap),
                    reached_epsilon: true,
                },
            )
        }
        None => {
            let mut recorder = Recorder::new(mdp, oracle, opts)?;
            let mut rounds = 0;
            while runner.episodes_fed() < cfg.episodes && rounds < ccfg.max_rounds {
                runner.record_round(mdp, oracle, &mut recorder)?;
                rounds += 1;
            }
            recorder.metrics.rounds = runner.rounds().to_vec();
            let gap = recorder.metrics.mixture_gap();
            (
                recorder.metrics,
                recorder.trace,
                ConcurrentOutcome {
                    agents: ccfg.agents,
                    rounds: runner.rounds().len(),
                    mixture_gap: gap,
                    reached_epsilon: false,
                },
            )
        }
    };
    let params = AuditParams {
        dim: mdp.dim(),
        horizon: mdp.horizon(),
        lambda: ccfg.agent.lambda,
        beta: runner.agent().bonus_radius(),
        episodes: cfg.episodes,
    };
    let audits = audit_all(mdp, &params, metrics.gap_counts.buckets(), &trace)?;
    Ok(SeedRun {
        seed,
        metrics,
        trace,
        audits,
        regression: cfg.audit_regression.then(|| runner.agent().regression_audit()),
        concurrent: Some(outcome),
    })
}

/// Parameters of the bonus audit for runs of `cfg` on `mdp`, as used by the
/// runs themselves; lets a stored trace be replayed.
pub fn audit_params(cfg: &ExperimentConfig, mdp: &LinearMdp) -> Result<AuditParams> {
    let horizon = mdp.horizon();
    let (lambda, beta) = match cfg.agent {
        AgentKind::Baseline => {
            let l = LsviUcb::new(cfg.baseline_config(horizon), mdp)?;
            (l.config().lambda, l.bonus_radius())
        }
        AgentKind::Ucbpp | AgentKind::Concurrent => {
            let l = LsviUcbPlusPlus::new(cfg.agent_config(horizon), mdp)?;
            (l.config().lambda, l.bonus_radius())
        }
    };
    Ok(AuditParams {
        dim: mdp.dim(),
        horizon,
        lambda,
        beta,
        episodes: cfg.episodes,
    })
}

/// Run one seed of an experiment on an already built instance.
pub fn run_seed(cfg: &ExperimentConfig, mdp: &LinearMdp, oracle: &OracleTables, seed: u64) -> Result<SeedRun> {
    match cfg.agent {
        AgentKind::Concurrent => run_concurrent(cfg, mdp, oracle, seed),
        _ => {
            let mut session = RunSession::new(cfg, mdp, oracle, seed)?;
            session.run_to(mdp, oracle, cfg.episodes)?;
            session.finish(mdp)
        }
    }
}

/// Run every seed of `cfg`, spreading seeds over the available cores.
/// Results come back in seed order; outputs are written when `cfg.output` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    let mdp = cfg.instance.build()?;
    let oracle = optimal_values(&mdp)?;
    let runs = run_seeds(&cfg.seeds, |seed| run_seed(cfg, &mdp, &oracle, seed))?;
    if let Some(dir) = &cfg.output {
        std::fs::create_dir_all(dir)?;
        for run in &runs {
            write_run(dir, run, Some(cfg))?;
        }
    }
    Ok(runs)
}

/// Map `f` over seeds with scoped worker threads, preserving order.
pub fn run_seeds<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(seeds.len().max(1));
    if workers <= 1 {
        return seeds.iter().map(|&s| f(s)).collect();
    }
    let chunk = seeds.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|&s| f(s)).collect::<Vec<_>>()))
            .collect();
        let mut out = Vec::with_capacity(seeds.len());
        for handle in handles {
            out.extend(handle.join().expect("seed worker panicked"));
        }
        out.into_iter().collect()
    })
}
