use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::concurrent::RoundLog;
use crate::error::{invalid, Result};

/// Dense `(h, n)` table over the dyadic gap buckets `n = 0..=N`, `N = ⌈H/Δ_min⌉`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapTable<T> {
    pub horizon: usize,
    pub delta_min: f64,
    pub n_max: usize,
    pub values: Vec<T>,
}

impl<T: Clone + Default> GapTable<T> {
    pub fn new(horizon: usize, delta_min: f64) -> Result<Self> {
        if !(delta_min > 0.0) || !delta_min.is_finite() {
            return Err(invalid(format!("delta_min must be positive, got {delta_min}")));
        }
        let n_max = (horizon as f64 / delta_min).ceil() as usize;
        Ok(Self {
            horizon,
            delta_min,
            n_max,
            values: vec![T::default(); horizon * (n_max + 1)],
        })
    }

    pub fn buckets(&self) -> usize {
        self.n_max + 1
    }

    pub fn get(&self, h: usize, n: usize) -> &T {
        &self.values[h * (self.n_max + 1) + n]
    }

    pub fn get_mut(&mut self, h: usize, n: usize) -> &mut T {
        &mut self.values[h * (self.n_max + 1) + n]
    }

    /// Buckets whose threshold `2ⁿ·Δ_min` is at most `excess`.
    pub fn buckets_reached(&self, excess: f64) -> Range<usize> {
        let mut hi = 0;
        while hi <= self.n_max && excess >= threshold(self.delta_min, hi) {
            hi += 1;
        }
        0..hi
    }
}

pub fn threshold(delta_min: f64, n: usize) -> f64 {
    delta_min * 2f64.powi(n as i32)
}

/// Counter of (k, h, s, a) tuples at which an estimate was on the wrong side of `Q*`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimismStats {
    pub checked: u64,
    pub violations: u64,
}

impl OptimismStats {
    pub fn fraction(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.violations as f64 / self.checked as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub per_episode_regret: Vec<f64>,
    pub cumulative_regret: Vec<f64>,
    pub gap_counts: GapTable<u64>,
    /// Episodes at whose start the learner switched policy.
    pub switch_episodes: Vec<usize>,
    pub variance_sums: Vec<f64>,
    pub bonus_partial_sums: GapTable<f64>,
    #[serde(default)]
    pub rounds: Vec<RoundLog>,
    #[serde(default)]
    pub optimism: Option<OptimismStats>,
}

impl RunMetrics {
    pub fn new(horizon: usize, delta_min: f64) -> Result<Self> {
        Ok(Self {
            per_episode_regret: Vec::new(),
            cumulative_regret: Vec::new(),
            gap_counts: GapTable::new(horizon, delta_min)?,
            switch_episodes: Vec::new(),
            variance_sums: Vec::new(),
            bonus_partial_sums: GapTable::new(horizon, delta_min)?,
            rounds: Vec::new(),
            optimism: None,
        })
    }

    pub fn episodes(&self) -> usize {
        self.per_episode_regret.len()
    }

    pub fn total_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    /// Cumulative regret after the first `k` episodes.
    pub fn regret_at(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.cumulative_regret[k - 1]
        }
    }

    pub fn switch_count(&self) -> usize {
        self.switch_episodes.len()
    }

    /// Number of switches among the first `k` episodes.
    pub fn switches_by(&self, k: usize) -> usize {
        self.switch_episodes.partition_point(|&e| e <= k)
    }

    pub fn push_episode(&mut self, regret: f64, variance_sum: f64) {
        let cum = self.total_regret() + regret;
        self.per_episode_regret.push(regret);
        self.cumulative_regret.push(cum);
        self.variance_sums.push(variance_sum);
    }

    /// `V*(s₁) − V^{π̂}(s₁)` for the uniform mixture over all recorded episodes.
    pub fn mixture_gap(&self) -> Option<f64> {
        let k = self.episodes();
        (k > 0).then(|| self.per_episode_regret.iter().sum::<f64>() / k as f64)
    }
}

/// Increment `K'(h, n)` for every bucket whose threshold the excess
/// `q_opt − q_pi` reaches; returns the buckets that were incremented.
pub fn gap_bucket_update(metrics: &mut RunMetrics, h: usize, q_opt: f64, q_pi: f64) -> Range<usize> {
    let hit = metrics.gap_counts.buckets_reached(q_opt - q_pi);
    for n in hit.clone() {
        *metrics.gap_counts.get_mut(h, n) += 1;
    }
    hit
}
