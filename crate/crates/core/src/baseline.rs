//! Plain LSVI-UCB: unweighted ridge regression recomputed every episode.
//!
//! Only used as a comparison fixture. Targets at step `h` depend on `s'`
//! alone, so the regression right-hand side is kept as per-next-state sums
//! of features and is reweighted by the current `V_{h+1}` at each episode.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::agent::dot;
use crate::env::{FeatureMap, Transition};
use crate::error::{invalid, Error, Result};
use crate::learner::{Learner, StepRecord};
use crate::linalg::SpdState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub lambda: f64,
    pub c_beta: f64,
    pub delta: f64,
    pub episodes: usize,
}

impl BaselineConfig {
    pub fn new(horizon: usize, episodes: usize) -> Self {
        let t = (horizon * episodes).max(1) as f64;
        Self {
            lambda: 1.0,
            c_beta: 1.0,
            delta: 1.0 / (18.0 * t),
            episodes,
        }
    }

    /// `β = c·d·H·√ln(2dT/δ)`.
    pub fn beta(&self, dim: usize, horizon: usize) -> Result<f64> {
        if !(self.c_beta > 0.0) || !(self.lambda > 0.0) {
            return Err(invalid("c_beta and lambda must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        let d = dim as f64;
        let t = (horizon * self.episodes).max(1) as f64;
        Ok(self.c_beta * d * horizon as f64 * (2.0 * d * t / self.delta).ln().max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BaselineStep {
    prec: SpdState,
    /// `Σ_i φ_i` grouped by observed next state.
    next_sums: BTreeMap<usize, DVector<f64>>,
    w: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsviUcb {
    cfg: BaselineConfig,
    dim: usize,
    horizon: usize,
    beta: f64,
    steps: Vec<BaselineStep>,
    episode: usize,
    next_step: usize,
    recomputes: usize,
}

impl LsviUcb {
    pub fn new<F: FeatureMap>(cfg: BaselineConfig, env: &F) -> Result<Self> {
        let (dim, horizon) = (env.dim(), env.horizon());
        let beta = cfg.beta(dim, horizon)?;
        let steps = (0..horizon)
            .map(|_| {
                Ok(BaselineStep {
                    prec: SpdState::new(dim, cfg.lambda)?,
                    next_sums: BTreeMap::new(),
                    w: DVector::zeros(dim),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            dim,
            horizon,
            beta,
            steps,
            episode: 0,
            next_step: 0,
            recomputes: 0,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.cfg
    }

    pub fn q<F: FeatureMap>(&self, env: &F, h: usize, s: usize, a: usize) -> f64 {
        let step = &self.steps[h];
        let phi = env.feature(s, a);
        let width = step.prec.quad_form(phi).unwrap_or(0.0).sqrt();
        (env.reward(h, s, a) + dot(&step.w, phi) + self.beta * width).clamp(0.0, self.horizon as f64)
    }

    fn v<F: FeatureMap>(&self, env: &F, h: usize, s: usize) -> f64 {
        if h >= self.horizon {
            return 0.0;
        }
        (0..env.num_actions())
            .map(|a| self.q(env, h, s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn recompute<F: FeatureMap>(&mut self, env: &F) -> Result<()> {
        for h in (0..self.horizon).rev() {
            let mut b = DVector::zeros(self.dim);
            for (&sn, sum) in &self.steps[h].next_sums {
                b.axpy(self.v(env, h + 1, sn), sum, 1.0);
            }
            self.steps[h].w = self.steps[h].prec.solve_vec(&b)?;
        }
        self.recomputes += 1;
        Ok(())
    }
}

impl Learner for LsviUcb {
    fn begin_episode<F: FeatureMap>(&mut self, env: &F, k: usize) -> Result<bool> {
        let previous_done = self.episode == 0 || self.next_step == self.horizon;
        if k != self.episode + 1 || !previous_done {
            return Err(Error::ProtocolViolation(format!(
                "begin_episode(k={k}) after episode {} at step {}",
                self.episode, self.next_step
            )));
        }
        self.episode = k;
        self.next_step = 0;
        self.recompute(env)?;
        Ok(true)
    }

    fn q_value<F: FeatureMap>(&self, env: &F, h: usize, s: usize, a: usize) -> f64 {
        self.q(env, h, s, a)
    }

    fn observe<F: FeatureMap>(&mut self, env: &F, k: usize, t: &Transition) -> Result<StepRecord> {
        if self.episode == 0 || k != self.episode || t.h != self.next_step {
            return Err(Error::ProtocolViolation(format!(
                "observe(k={k}, h={}) but expected (k={}, h={})",
                t.h, self.episode, self.next_step
            )));
        }
        let phi = env.feature(t.s, t.a);
        let step = &mut self.steps[t.h];
        let quad = step.prec.quad_form(phi)?;
        step.prec.rank_one_update(phi, 1.0)?;
        let dim = self.dim;
        step.next_sums
            .entry(t.s_next)
            .or_insert_with(|| DVector::zeros(dim))
            .iter_mut()
            .zip(phi)
            .for_each(|(acc, x)| *acc += x);
        self.next_step += 1;
        Ok(StepRecord {
            h: t.h,
            s: t.s,
            a: t.a,
            s_next: t.s_next,
            quad,
            sigma_sq: 1.0,
            sigma_bar_sq: 1.0,
            inv_weight: 1.0,
        })
    }

    fn bonus_radius(&self) -> f64 {
        self.beta
    }

    fn switch_count(&self) -> usize {
        self.recomputes
    }
}
