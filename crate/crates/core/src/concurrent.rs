//! Concurrent rounds: `M` logical agents share one LSVI-UCB++ learner.
//!
//! A round freezes the current policy, samples `M` trajectories (one per
//! agent, each from its own RNG stream) and then feeds them to the learner
//! in agent order. The switch trigger is checked after every fed trajectory;
//! once it fires, the rest of the round is discarded and the switch takes
//! effect at the start of the next round.

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, LsviUcbPlusPlus};
use crate::env::{FeatureMap, LinearMdp, Transition};
use crate::error::{invalid, Error, Result};
use crate::harness::{Recorder, RecorderOptions};
use crate::learner::{Learner, StepRecord};
use crate::oracle::OracleTables;
use crate::rng::{agent_stream, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcurrentConfig {
    pub agents: usize,
    pub epsilon: f64,
    pub max_rounds: usize,
    pub agent: AgentConfig,
}

impl ConcurrentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 {
            return Err(invalid("need at least one agent"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_rounds == 0 {
            return Err(invalid("max_rounds must be positive"));
        }
        self.agent.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round_id: usize,
    pub episodes_fed: usize,
    pub switch_fired: bool,
    pub episodes_discarded: usize,
    /// Learner epoch whose policy every agent followed in this round.
    pub epoch: usize,
}

/// A trajectory that was fed to the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct FedEpisode {
    pub k: usize,
    pub agent: usize,
    pub steps: Vec<(Transition, StepRecord)>,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub log: RoundLog,
    /// True when the round began by applying a pending switch.
    pub switched_at_start: bool,
    pub fed: Vec<FedEpisode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcurrentRunner {
    agent: LsviUcbPlusPlus,
    rngs: Vec<StreamRng>,
    episodes_fed: usize,
    rounds: Vec<RoundLog>,
}

impl ConcurrentRunner {
    pub fn new<F: FeatureMap>(cfg: &ConcurrentConfig, env: &F, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            agent: LsviUcbPlusPlus::new(cfg.agent.clone(), env)?,
            rngs: (0..cfg.agents as u64).map(|j| agent_stream(seed, j)).collect(),
            episodes_fed: 0,
            rounds: Vec::new(),
        })
    }

    pub fn agent(&self) -> &LsviUcbPlusPlus {
        &self.agent
    }

    pub fn agents(&self) -> usize {
        self.rngs.len()
    }

    pub fn episodes_fed(&self) -> usize {
        self.episodes_fed
    }

    pub fn rounds(&self) -> &[RoundLog] {
        &self.rounds
    }

    /// Sample all `M` trajectories under the current (frozen) policy.
    fn sample_round(&mut self, mdp: &LinearMdp) -> Vec<Vec<Transition>> {
        let agent = &self.agent;
        self.rngs
            .iter_mut()
            .map(|rng| {
                let mut s = mdp.initial_state();
                (0..mdp.horizon())
                    .map(|h| {
                        let t = mdp.sample_step(h, s, agent.act(mdp, h, s), rng);
                        s = t.s_next;
                        t
                    })
                    .collect()
            })
            .collect()
    }

    pub fn run_round(&mut self, mdp: &LinearMdp) -> Result<RoundOutcome> {
        let m = self.agents();
        let first_k = self.episodes_fed + 1;
        let switched_at_start = self.agent.maybe_switch(mdp, first_k)?;
        let epoch = self.agent.epoch();
        let trajectories = self.sample_round(mdp);

        let mut fed = Vec::new();
        let mut switch_fired = false;
        for (j, traj) in trajectories.into_iter().enumerate() {
            let k = self.episodes_fed + 1;
            if j > 0 && self.agent.maybe_switch(mdp, k)? {
                return Err(Error::ProtocolViolation(
                    "policy changed inside a concurrent round".into(),
                ));
            }
            let mut steps = Vec::with_capacity(traj.len());
            for t in traj {
                steps.push((t, self.agent.observe(mdp, k, &t)?));
            }
            self.episodes_fed = k;
            fed.push(FedEpisode { k, agent: j, steps });
            if self.agent.switch_pending() {
                switch_fired = true;
                break;
            }
        }
        let log = RoundLog {
            round_id: self.rounds.len() + 1,
            episodes_fed: fed.len(),
            switch_fired,
            episodes_discarded: m - fed.len(),
            epoch,
        };
        self.rounds.push(log);
        Ok(RoundOutcome {
            log,
            switched_at_start,
            fed,
        })
    }

    /// Run rounds until the mixture over fed episodes is `epsilon`-optimal.
    ///
    /// Returns the number of rounds used, the final mixture gap and the
    /// recorder, or [`Error::BudgetExhausted`] after `max_rounds` rounds.
    pub fn run_until_epsilon(
        &mut self,
        mdp: &LinearMdp,
        oracle: &OracleTables,
        epsilon: f64,
        max_rounds: usize,
        opts: RecorderOptions,
    ) -> Result<(usize, f64, Recorder)> {
        let mut recorder = Recorder::new(mdp, oracle, opts)?;
        let mut gap = f64::INFINITY;
        for _ in 0..max_rounds {
            self.record_round(mdp, oracle, &mut recorder)?;
            gap = recorder.metrics.mixture_gap().unwrap_or(f64::INFINITY);
            if gap <= epsilon {
                recorder.metrics.rounds = self.rounds.clone();
                return Ok((self.rounds.len(), gap, recorder));
            }
        }
        recorder.metrics.rounds = self.rounds.clone();
        Err(Error::BudgetExhausted {
            rounds: self.rounds.len(),
            mixture_gap: gap,
            partial: Box::new(recorder.metrics),
        })
    }

    /// Run one round and log its fed episodes.
    pub fn record_round(&mut self, mdp: &LinearMdp, oracle: &OracleTables, recorder: &mut Recorder) -> Result<RoundLog> {
        let outcome = self.run_round(mdp)?;
        let beta = self.agent.bonus_radius();
        let horizon = mdp.horizon() as f64;
        for (i, ep) in outcome.fed.iter().enumerate() {
            recorder.begin_episode(mdp, oracle, &self.agent, ep.k, i == 0 && outcome.switched_at_start)?;
            for (t, rec) in &ep.steps {
                let q_opt = self.agent.q_opt(mdp, t.h, t.s, t.a);
                recorder.record_step(ep.k, q_opt, beta, horizon, rec);
            }
            recorder.end_episode(mdp, oracle);
        }
        Ok(outcome.log)
    }
}

/// Lengths `e_t` of the runs of fed episodes between consecutive switches,
/// including a trailing run that has not yet ended in a switch.
pub fn switch_segments(rounds: &[RoundLog]) -> Vec<usize> {
    let mut segments = Vec::new();
    let mut current = 0;
    for r in rounds {
        current += r.episodes_fed;
        if r.switch_fired {
            segments.push(current);
            current = 0;
        }
    }
    if current > 0 {
        segments.push(current);
    }
    segments
}

/// Checks of the round accounting on a finished log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundAccounting {
    pub rounds: usize,
    pub switches: usize,
    pub episodes_fed: usize,
    /// `Σ_t ⌈e_t / M⌉`.
    pub segment_rounds: usize,
    /// `N_switch + ⌈K_fed / M⌉ + 1`.
    pub bound: usize,
}

impl RoundAccounting {
    pub fn from_log(rounds: &[RoundLog], agents: usize) -> Self {
        let switches = rounds.iter().filter(|r| r.switch_fired).count();
        let episodes_fed = rounds.iter().map(|r| r.episodes_fed).sum::<usize>();
        Self {
            rounds: rounds.len(),
            switches,
            episodes_fed,
            segment_rounds: switch_segments(rounds).iter().map(|e| e.div_ceil(agents)).sum(),
            bound: switches + episodes_fed.div_ceil(agents) + 1,
        }
    }

    pub fn identity_holds(&self) -> bool {
        self.rounds == self.segment_rounds
    }

    pub fn bound_holds(&self) -> bool {
        self.rounds <= self.bound
    }
}
