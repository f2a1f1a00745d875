//! Finite-state episodic linear MDPs.
//!
//! A [`LinearMdp`] stores the feature table `φ(s,a)`, per-step measures
//! `θ_h(s')` and a deterministic reward table. The transition kernel
//! `P_h(s'|s,a) = ⟨φ(s,a), θ_h(s')⟩` is materialised once at construction
//! and validated as a probability kernel.
//!
//! Learners only see the [`FeatureMap`] view (features, rewards, sizes);
//! `θ` and the kernel stay on the environment side.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::oracle;
use crate::rng::{agent_stream, StreamRng};

pub const INSTANCE_FORMAT: &str = "lsvi-workbench/linear-mdp";
pub const INSTANCE_VERSION: u32 = 1;

const PROB_NEG_TOL: f64 = 1e-12;
const PROB_SUM_TOL: f64 = 1e-9;
const NORM_TOL: f64 = 1e-9;
const MAX_RESAMPLES: usize = 100;

/// What a learner is allowed to know about the environment.
pub trait FeatureMap {
    fn dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn feature(&self, s: usize, a: usize) -> &[f64];
    fn reward(&self, h: usize, s: usize, a: usize) -> f64;
}

/// One observed step of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// Tabular model: `transition[((h*S + s)*A + a)*S + s']` and
/// `reward[(h*S + s)*A + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub initial_state: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct LinearMdp {
    states: usize,
    actions: usize,
    horizon: usize,
    dim: usize,
    initial_state: usize,
    features: Vec<f64>,
    theta: Vec<f64>,
    reward: Vec<f64>,
    kernel: Vec<f64>,
}

impl LinearMdp {
    /// Build from raw tables, laid out as `features[(s*A + a)*d + j]`,
    /// `theta[(h*S + s')*d + j]` and `reward[(h*S + s)*A + a]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        states: usize,
        actions: usize,
        horizon: usize,
        dim: usize,
        initial_state: usize,
        features: Vec<f64>,
        theta: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        if states == 0 || actions == 0 || horizon == 0 || dim == 0 {
            return Err(invalid("all dimensions must be positive"));
        }
        if initial_state >= states {
            return Err(invalid(format!("initial state {initial_state} out of range")));
        }
        expect_len("features", &features, states * actions * dim)?;
        expect_len("theta", &theta, horizon * states * dim)?;
        expect_len("reward", &reward, horizon * states * actions)?;

        for (i, phi) in features.chunks(dim).enumerate() {
            let n = norm(phi);
            if n > 1.0 + NORM_TOL {
                return Err(invalid(format!(
                    "feature of pair {} has norm {n} > 1",
                    i
                )));
            }
        }
        let theta_cap = (dim as f64).sqrt() + NORM_TOL;
        for (i, th) in theta.chunks(dim).enumerate() {
            let n = norm(th);
            if n > theta_cap {
                return Err(invalid(format!("theta row {i} has norm {n} > sqrt(d)")));
            }
        }
        if let Some(r) = reward.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(invalid(format!("reward {r} outside [0, 1]")));
        }

        let mut kernel = vec![0.0; horizon * states * actions * states];
        for h in 0..horizon {
            for s in 0..states {
                for a in 0..actions {
                    let phi = &features[(s * actions + a) * dim..][..dim];
                    let base = ((h * states + s) * actions + a) * states;
                    let mut total = 0.0;
                    for sn in 0..states {
                        let th = &theta[(h * states + sn) * dim..][..dim];
                        let p: f64 = phi.iter().zip(th).map(|(x, y)| x * y).sum();
                        if p < -PROB_NEG_TOL {
                            return Err(invalid(format!(
                                "negative transition mass {p} at h={h} s={s} a={a} s'={sn}"
                            )));
                        }
                        kernel[base + sn] = p;
                        total += p;
                    }
                    if (total - 1.0).abs() > PROB_SUM_TOL {
                        return Err(invalid(format!(
                            "transition mass sums to {total} at h={h} s={s} a={a}"
                        )));
                    }
                }
            }
        }

        Ok(Self {
            states,
            actions,
            horizon,
            dim,
            initial_state,
            features,
            theta,
            reward,
            kernel,
        })
    }

    /// One-hot embedding of a tabular model: `d = S·A`, `φ(s,a) = e_{s·A+a}`
    /// and `θ_h(s')[s·A+a] = P_h(s'|s,a)`.
    pub fn from_tabular(model: &TabularModel) -> Result<Self> {
        let TabularModel {
            states: ns,
            actions: na,
            horizon: nh,
            initial_state,
            ref transition,
            ref reward,
        } = *model;
        if ns == 0 || na == 0 || nh == 0 {
            return Err(invalid("all dimensions must be positive"));
        }
        expect_len("transition", transition, nh * ns * na * ns)?;
        expect_len("reward", reward, nh * ns * na)?;
        for (row_idx, row) in transition.chunks(ns).enumerate() {
            if row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                return Err(invalid(format!("transition row {row_idx} has a negative entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_SUM_TOL {
                return Err(invalid(format!(
                    "transition row {row_idx} sums to {total}, not a distribution"
                )));
            }
        }

        let dim = ns * na;
        let mut features = vec![0.0; ns * na * dim];
        for idx in 0..dim {
            features[idx * dim + idx] = 1.0;
        }
        let mut theta = vec![0.0; nh * ns * dim];
        for h in 0..nh {
            for s in 0..ns {
                for a in 0..na {
                    for sn in 0..ns {
                        let p = transition[((h * ns + s) * na + a) * ns + sn];
                        theta[(h * ns + sn) * dim + s * na + a] = p;
                    }
                }
            }
        }
        Self::new(ns, na, nh, dim, initial_state, features, theta, reward.clone())
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn theta(&self, h: usize, s_next: usize) -> &[f64] {
        &self.theta[(h * self.states + s_next) * self.dim..][..self.dim]
    }

    /// `P_h(·|s,a)` as induced by `⟨φ(s,a), θ_h(·)⟩`.
    pub fn kernel_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let base = ((h * self.states + s) * self.actions + a) * self.states;
        &self.kernel[base..base + self.states]
    }

    /// Read the kernel back as a tabular model.
    pub fn to_tabular(&self) -> TabularModel {
        TabularModel {
            states: self.states,
            actions: self.actions,
            horizon: self.horizon,
            initial_state: self.initial_state,
            transition: self.kernel.clone(),
            reward: self.reward.clone(),
        }
    }

    /// Draw `s'` from `P_h(·|s,a)` by inverse CDF.
    pub fn sample_step<R: Rng + ?Sized>(&self, h: usize, s: usize, a: usize, rng: &mut R) -> Transition {
        let row = self.kernel_row(h, s, a);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut s_next = None;
        let mut last_positive = 0;
        for (sn, p) in row.iter().enumerate() {
            let p = p.max(0.0);
            if p > 0.0 {
                last_positive = sn;
            }
            acc += p;
            if s_next.is_none() && u < acc {
                s_next = Some(sn);
            }
        }
        Transition {
            h,
            s,
            a,
            r: self.reward(h, s, a),
            s_next: s_next.unwrap_or(last_positive),
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

impl FeatureMap for LinearMdp {
    fn dim(&self) -> usize {
        self.dim
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn num_actions(&self) -> usize {
        self.actions
    }

    fn feature(&self, s: usize, a: usize) -> &[f64] {
        &self.features[(s * self.actions + a) * self.dim..][..self.dim]
    }

    fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.reward[(h * self.states + s) * self.actions + a]
    }
}

/// Tabular instance whose minimum gap is close to `delta_min_target`.
///
/// Each `(h, s)` gets a random optimal action; every other action is given a
/// gap drawn from `[t, min(2t, 0.98)]` and one pair is pinned at exactly `t`.
/// Rewards are solved backwards so that these gaps hold exactly, with the
/// transition kernel a mixture of a state-level distribution and a small
/// action-specific perturbation. Candidates whose rewards leave `[0, 1]`, or
/// whose oracle gap falls outside `[t/2, 2t]`, are resampled.
pub fn make_gap_instance(
    states: usize,
    actions: usize,
    horizon: usize,
    delta_min_target: f64,
    seed: u64,
) -> Result<LinearMdp> {
    if states < 2 || actions < 2 || horizon == 0 {
        return Err(invalid("gap instances need S >= 2, A >= 2 and H >= 1"));
    }
    if !(delta_min_target > 0.0 && delta_min_target < 1.0) {
        return Err(invalid(format!(
            "delta_min_target must lie in (0, 1), got {delta_min_target}"
        )));
    }
    let t = delta_min_target;
    let mut rng = agent_stream(seed, 0);
    let mut last_reason = String::new();
    for _ in 0..MAX_RESAMPLES {
        match gap_candidate(states, actions, horizon, t, &mut rng) {
            Ok(model) => {
                let mdp = LinearMdp::from_tabular(&model)?;
                match oracle::optimal_values(&mdp) {
                    Ok(tables) if tables.delta_min() >= 0.5 * t && tables.delta_min() <= 2.0 * t => {
                        return Ok(mdp)
                    }
                    Ok(tables) => {
                        last_reason = format!("oracle gap {} off target", tables.delta_min())
                    }
                    Err(e) => last_reason = e.to_string(),
                }
            }
            Err(reason) => last_reason = reason,
        }
    }
    Err(Error::GenerationFailure {
        attempts: MAX_RESAMPLES,
        reason: last_reason,
    })
}

fn gap_candidate(
    ns: usize,
    na: usize,
    nh: usize,
    t: f64,
    rng: &mut StreamRng,
) -> std::result::Result<TabularModel, String> {
    let mix = 0.5 / nh as f64;
    let gap_hi = (2.0 * t).min(0.98).max(t);
    let mut transition = vec![0.0; nh * ns * na * ns];
    let mut reward = vec![0.0; nh * ns * na];
    let mut v_next = vec![0.0; ns];
    let pinned = (rng.gen_range(0..nh), rng.gen_range(0..ns));

    for h in (0..nh).rev() {
        let mut v_here = vec![0.0; ns];
        for s in 0..ns {
            let base_dist = random_simplex(rng, ns);
            let mut cont = vec![0.0; na];
            for a in 0..na {
                let pert = random_simplex(rng, ns);
                let row = &mut transition[((h * ns + s) * na + a) * ns..][..ns];
                for sn in 0..ns {
                    row[sn] = (1.0 - mix) * base_dist[sn] + mix * pert[sn];
                }
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= total);
                cont[a] = row.iter().zip(&v_next).map(|(p, v)| p * v).sum();
            }

            let best = rng.gen_range(0..na);
            let pinned_action = if (h, s) == pinned {
                Some((best + 1 + rng.gen_range(0..na - 1)) % na)
            } else {
                None
            };
            let mut gaps = vec![0.0; na];
            for (a, g) in gaps.iter_mut().enumerate() {
                if a == best {
                    continue;
                }
                *g = if Some(a) == pinned_action {
                    t
                } else {
                    rng.gen_range(t..=gap_hi)
                };
            }
            // r(s,a) = r* + C(a*) - C(a) - g(a) must stay inside [0, 1].
            let mut lo: f64 = 0.0;
            let mut hi: f64 = 1.0;
            for a in 0..na {
                let offset = cont[best] - cont[a] - gaps[a];
                lo = lo.max(-offset);
                hi = hi.min(1.0 - offset);
            }
            if lo > hi {
                return Err(format!("no feasible reward at h={h} s={s}"));
            }
            let r_best = rng.gen_range(lo..=hi);
            for a in 0..na {
                let r = (r_best + cont[best] - cont[a] - gaps[a]).clamp(0.0, 1.0);
                reward[(h * ns + s) * na + a] = r;
            }
            v_here[s] = r_best + cont[best];
        }
        v_next = v_here;
    }

    Ok(TabularModel {
        states: ns,
        actions: na,
        horizon: nh,
        initial_state: 0,
        transition,
        reward,
    })
}

/// Latent-factor instance with `d < S·A`: `φ(s,a)` lies on the probability
/// simplex in `R^d` and `θ_h(·)[j]` is a distribution over next states for
/// each latent factor `j`, so the kernel is exactly linear in `φ`.
pub fn make_low_rank_instance(
    states: usize,
    actions: usize,
    horizon: usize,
    dim: usize,
    seed: u64,
) -> Result<LinearMdp> {
    if states == 0 || actions == 0 || horizon == 0 || dim == 0 {
        return Err(invalid("all dimensions must be positive"));
    }
    let mut rng = agent_stream(seed, 0);
    let mut last_reason = String::new();
    for _ in 0..MAX_RESAMPLES {
        let mut features = Vec::with_capacity(states * actions * dim);
        for _ in 0..states * actions {
            features.extend(random_simplex(&mut rng, dim));
        }
        let mut theta = vec![0.0; horizon * states * dim];
        for h in 0..horizon {
            for j in 0..dim {
                let mu = random_simplex(&mut rng, states);
                for (sn, p) in mu.into_iter().enumerate() {
                    theta[(h * states + sn) * dim + j] = p;
                }
            }
        }
        let reward: Vec<f64> = (0..horizon * states * actions).map(|_| rng.gen()).collect();
        let mdp = LinearMdp::new(states, actions, horizon, dim, 0, features, theta, reward)?;
        match oracle::optimal_values(&mdp) {
            Ok(_) => return Ok(mdp),
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(Error::GenerationFailure {
        attempts: MAX_RESAMPLES,
        reason: last_reason,
    })
}

fn random_simplex(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    // Normalised exponentials give a uniform draw on the simplex.
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn expect_len(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(invalid(format!("{name} has {} entries, expected {len}", v.len())));
    }
    Ok(())
}

/// On-disk layout of an instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceFile {
    format: String,
    version: u32,
    states: usize,
    actions: usize,
    horizon: usize,
    dim: usize,
    initial_state: usize,
    /// `features[s][a]` is `φ(s,a)`.
    features: Vec<Vec<Vec<f64>>>,
    /// `theta[h][s']` is `θ_h(s')`.
    theta: Vec<Vec<Vec<f64>>>,
    /// `reward[h][s][a]`.
    reward: Vec<Vec<Vec<f64>>>,
}

impl From<LinearMdp> for InstanceFile {
    fn from(m: LinearMdp) -> Self {
        let d = m.dim;
        let features = (0..m.states)
            .map(|s| (0..m.actions).map(|a| m.feature(s, a).to_vec()).collect())
            .collect();
        let theta = (0..m.horizon)
            .map(|h| (0..m.states).map(|sn| m.theta[(h * m.states + sn) * d..][..d].to_vec()).collect())
            .collect();
        let reward = (0..m.horizon)
            .map(|h| {
                (0..m.states)
                    .map(|s| (0..m.actions).map(|a| m.reward(h, s, a)).collect())
                    .collect()
            })
            .collect();
        Self {
            format: INSTANCE_FORMAT.to_string(),
            version: INSTANCE_VERSION,
            states: m.states,
            actions: m.actions,
            horizon: m.horizon,
            dim: m.dim,
            initial_state: m.initial_state,
            features,
            theta,
            reward,
        }
    }
}

impl TryFrom<InstanceFile> for LinearMdp {
    type Error = Error;

    fn try_from(f: InstanceFile) -> Result<Self> {
        if f.format != INSTANCE_FORMAT {
            return Err(Error::Format(format!("unexpected format tag {:?}", f.format)));
        }
        if f.version != INSTANCE_VERSION {
            return Err(Error::Format(format!("unsupported instance version {}", f.version)));
        }
        let flat = |v: Vec<Vec<Vec<f64>>>| -> Vec<f64> { v.into_iter().flatten().flatten().collect() };
        LinearMdp::new(
            f.states,
            f.actions,
            f.horizon,
            f.dim,
            f.initial_state,
            flat(f.features),
            flat(f.theta),
            flat(f.reward),
        )
    }
}
