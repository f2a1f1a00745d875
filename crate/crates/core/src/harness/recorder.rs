use serde::{Deserialize, Serialize};

use super::metrics::{gap_bucket_update, OptimismStats, RunMetrics};
use crate::env::{FeatureMap, LinearMdp};
use crate::error::Result;
use crate::learner::{Learner, StepRecord};
use crate::oracle::{self, DeterministicPolicy, OracleTables, PolicyValues};

/// Slack before an estimate on the wrong side of `Q*` counts as a violation.
pub const OPTIMISM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecorderOptions {
    /// Enumerate every `(h, s, a)` each episode and compare both estimates with `Q*`.
    pub track_optimism: bool,
}

/// A visited step that landed in at least one gap bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub k: usize,
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub quad: f64,
    pub sigma_sq: f64,
    pub inv_weight: f64,
    /// Buckets `0..buckets` were incremented.
    pub buckets: usize,
}

#[derive(Debug, Clone)]
struct EpochView {
    policy: DeterministicPolicy,
    values: PolicyValues,
    violations: u64,
}

/// Turns a stream of learner episodes into [`RunMetrics`] using the exact oracle.
///
/// The greedy policy and its exact value are recomputed only when the
/// learner reports a switch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Recorder {
    pub metrics: RunMetrics,
    pub trace: Vec<TraceEntry>,
    opts: RecorderOptions,
    #[serde(skip)]
    view: Option<EpochView>,
    #[serde(skip)]
    step_variance: f64,
}

impl Recorder {
    pub fn new(mdp: &LinearMdp, oracle: &OracleTables, opts: RecorderOptions) -> Result<Self> {
        let mut metrics = RunMetrics::new(mdp.horizon(), oracle.delta_min())?;
        if opts.track_optimism {
            metrics.optimism = Some(OptimismStats::default());
        }
        Ok(Self {
            metrics,
            trace: Vec::new(),
            opts,
            view: None,
            step_variance: 0.0,
        })
    }

    pub fn options(&self) -> RecorderOptions {
        self.opts
    }

    /// Refresh the cached greedy policy if the learner switched (or nothing is cached).
    pub fn begin_episode<L: Learner>(
        &mut self,
        mdp: &LinearMdp,
        oracle: &OracleTables,
        learner: &L,
        k: usize,
        switched: bool,
    ) -> Result<()> {
        if switched {
            self.metrics.switch_episodes.push(k);
        }
        if switched || self.view.is_none() {
            self.view = Some(self.epoch_view(mdp, oracle, learner)?);
        }
        self.step_variance = 0.0;
        Ok(())
    }

    fn epoch_view<L: Learner>(&self, mdp: &LinearMdp, oracle: &OracleTables, learner: &L) -> Result<EpochView> {
        let (nh, ns, na) = (mdp.horizon(), mdp.states(), mdp.num_actions());
        let policy = DeterministicPolicy::from_fn(nh, ns, na, |h, s| learner.act(mdp, h, s));
        let values = oracle::policy_value(mdp, &policy)?;
        let mut violations = 0;
        if self.opts.track_optimism {
            for h in 0..nh {
                for s in 0..ns {
                    for a in 0..na {
                        let q = oracle.q_star(h, s, a);
                        let upper_bad = learner.q_value(mdp, h, s, a) < q - OPTIMISM_TOL;
                        let lower_bad = learner
                            .q_lower(mdp, h, s, a)
                            .is_some_and(|lo| lo > q + OPTIMISM_TOL);
                        violations += u64::from(upper_bad || lower_bad);
                    }
                }
            }
        }
        Ok(EpochView {
            policy,
            values,
            violations,
        })
    }

    pub fn action(&self, h: usize, s: usize) -> usize {
        self.view.as_ref().expect("begin_episode not called").policy.action(h, s)
    }

    /// Log one visited step: bucket update, bonus partial sums, trace.
    pub fn record_step(&mut self, k: usize, q_opt: f64, bonus_radius: f64, horizon: f64, rec: &StepRecord) {
        let q_pi = self
            .view
            .as_ref()
            .expect("begin_episode not called")
            .values
            .q(rec.h, rec.s, rec.a);
        let hit = gap_bucket_update(&mut self.metrics, rec.h, q_opt, q_pi);
        self.step_variance += rec.sigma_sq;
        if hit.is_empty() {
            return;
        }
        let bonus = (bonus_radius.max(1.0) * rec.quad.sqrt()).min(horizon);
        for n in hit.clone() {
            *self.metrics.bonus_partial_sums.get_mut(rec.h, n) += bonus;
        }
        self.trace.push(TraceEntry {
            k,
            h: rec.h,
            s: rec.s,
            a: rec.a,
            quad: rec.quad,
            sigma_sq: rec.sigma_sq,
            inv_weight: rec.inv_weight,
            buckets: hit.end,
        });
    }

    pub fn end_episode(&mut self, mdp: &LinearMdp, oracle: &OracleTables) {
        let view = self.view.as_ref().expect("begin_episode not called");
        let s1 = mdp.initial_state();
        let regret = oracle.v_star(0, s1) - view.values.v(0, s1);
        let entries = (mdp.horizon() * mdp.states() * mdp.num_actions()) as u64;
        let violations = view.violations;
        if let Some(stats) = self.metrics.optimism.as_mut() {
            stats.checked += entries;
            stats.violations += violations;
        }
        self.metrics.push_episode(regret, self.step_variance);
        self.step_variance = 0.0;
    }
}
