use serde::{Deserialize, Serialize};

use crate::env::{FeatureMap, Transition};
use crate::error::Result;

/// Per-step quantities a learner reports when it absorbs a transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    /// `φᵀ Σ⁻¹ φ` at the precision in force when the action was taken.
    pub quad: f64,
    pub sigma_sq: f64,
    pub sigma_bar_sq: f64,
    /// Regression weight given to the sample (`σ̄⁻²`, or 1 when unweighted).
    pub inv_weight: f64,
}

/// Common episodic interface used by the harness.
///
/// Protocol per episode `k` (starting at 1): one `begin_episode(k)`, then
/// `observe` for steps `0..H` in order.
pub trait Learner {
    /// Returns true when the greedy policy may differ from the previous episode's.
    fn begin_episode<F: FeatureMap>(&mut self, env: &F, k: usize) -> Result<bool>;

    /// The optimistic action value the learner acts on.
    fn q_value<F: FeatureMap>(&self, env: &F, h: usize, s: usize, a: usize) -> f64;

    /// Lower estimate of `Q*`, for learners that maintain one.
    fn q_lower<F: FeatureMap>(&self, _env: &F, _h: usize, _s: usize, _a: usize) -> Option<f64> {
        None
    }

    fn observe<F: FeatureMap>(&mut self, env: &F, k: usize, t: &Transition) -> Result<StepRecord>;

    /// Exploration radius multiplying `‖φ‖_{Σ⁻¹}`.
    fn bonus_radius(&self) -> f64;

    /// Number of policy switches so far (episodes whose `begin_episode` returned true).
    fn switch_count(&self) -> usize;

    /// Lowest-index maximiser of [`q_value`](Self::q_value).
    fn act<F: FeatureMap>(&self, env: &F, h: usize, s: usize) -> usize {
        crate::oracle::argmax_lowest((0..env.num_actions()).map(|a| self.q_value(env, h, s, a)))
    }
}
