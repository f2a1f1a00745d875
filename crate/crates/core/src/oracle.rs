//! Exact finite-horizon dynamic programming on a [`LinearMdp`].

use serde::{Deserialize, Serialize};

use crate::env::{FeatureMap, LinearMdp};
use crate::error::{invalid, Error, Result};

/// A gap counts as strictly positive above this threshold.
pub const GAP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTables {
    states: usize,
    actions: usize,
    horizon: usize,
    q_star: Vec<f64>,
    v_star: Vec<f64>,
    gap: Vec<f64>,
    delta_min: f64,
}

impl OracleTables {
    pub fn q_star(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q_star[(h * self.states + s) * self.actions + a]
    }

    /// `V*_h(s)` for `h ∈ 0..=H`, with `V*_H ≡ 0`.
    pub fn v_star(&self, h: usize, s: usize) -> f64 {
        self.v_star[h * self.states + s]
    }

    pub fn gap(&self, h: usize, s: usize, a: usize) -> f64 {
        self.gap[(h * self.states + s) * self.actions + a]
    }

    pub fn delta_min(&self) -> f64 {
        self.delta_min
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    /// Greedy policy with respect to `Q*`.
    pub fn greedy_policy(&self) -> DeterministicPolicy {
        DeterministicPolicy::from_fn(self.horizon, self.states, self.actions, |h, s| {
            argmax_lowest((0..self.actions).map(|a| self.q_star(h, s, a)))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    horizon: usize,
    states: usize,
    num_actions: usize,
    action: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(horizon: usize, states: usize, num_actions: usize, action: Vec<usize>) -> Result<Self> {
        if action.len() != horizon * states {
            return Err(invalid(format!(
                "policy table has {} entries, expected {}",
                action.len(),
                horizon * states
            )));
        }
        if let Some(a) = action.iter().find(|a| **a >= num_actions) {
            return Err(invalid(format!("action {a} out of range")));
        }
        Ok(Self {
            horizon,
            states,
            num_actions,
            action,
        })
    }

    pub fn from_fn(
        horizon: usize,
        states: usize,
        num_actions: usize,
        mut f: impl FnMut(usize, usize) -> usize,
    ) -> Self {
        let mut action = Vec::with_capacity(horizon * states);
        for h in 0..horizon {
            for s in 0..states {
                action.push(f(h, s));
            }
        }
        Self {
            horizon,
            states,
            num_actions,
            action,
        }
    }

    pub fn constant(horizon: usize, states: usize, num_actions: usize, a: usize) -> Self {
        Self::from_fn(horizon, states, num_actions, |_, _| a)
    }

    pub fn action(&self, h: usize, s: usize) -> usize {
        self.action[h * self.states + s]
    }
}

/// `V^π` and `Q^π` from backward induction.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValues {
    states: usize,
    actions: usize,
    v: Vec<f64>,
    q: Vec<f64>,
}

impl PolicyValues {
    /// `V^π_h(s)` for `h ∈ 0..=H`.
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[h * self.states + s]
    }

    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[(h * self.states + s) * self.actions + a]
    }
}

/// Lowest index attaining the maximum.
pub fn argmax_lowest(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

fn backup(mdp: &LinearMdp, h: usize, s: usize, a: usize, v_next: &[f64]) -> f64 {
    let row = mdp.kernel_row(h, s, a);
    mdp.reward(h, s, a) + row.iter().zip(v_next).map(|(p, v)| p * v).sum::<f64>()
}

/// Backward induction for `Q*`, `V*`, the gaps and `Δ_min`.
pub fn optimal_values(mdp: &LinearMdp) -> Result<OracleTables> {
    let (ns, na, nh) = (mdp.states(), mdp.num_actions(), mdp.horizon());
    let mut q_star = vec![0.0; nh * ns * na];
    let mut v_star = vec![0.0; (nh + 1) * ns];
    let mut gap = vec![0.0; nh * ns * na];
    for h in (0..nh).rev() {
        let (head, tail) = v_star.split_at_mut((h + 1) * ns);
        let v_next = &tail[..ns];
        let v_here = &mut head[h * ns..];
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let q = backup(mdp, h, s, a, v_next);
                q_star[(h * ns + s) * na + a] = q;
                best = best.max(q);
            }
            v_here[s] = best;
            for a in 0..na {
                let idx = (h * ns + s) * na + a;
                gap[idx] = best - q_star[idx];
            }
        }
    }
    let delta_min = gap
        .iter()
        .copied()
        .filter(|g| *g > GAP_EPS)
        .fold(f64::INFINITY, f64::min);
    if !delta_min.is_finite() {
        return Err(Error::DegenerateInstance);
    }
    Ok(OracleTables {
        states: ns,
        actions: na,
        horizon: nh,
        q_star,
        v_star,
        gap,
        delta_min,
    })
}

/// Exact `V^π`, `Q^π` for a deterministic policy.
pub fn policy_value(mdp: &LinearMdp, pi: &DeterministicPolicy) -> Result<PolicyValues> {
    let (ns, na, nh) = (mdp.states(), mdp.num_actions(), mdp.horizon());
    if pi.horizon != nh || pi.states != ns || pi.num_actions != na {
        return Err(invalid("policy shape does not match the instance"));
    }
    let mut v = vec![0.0; (nh + 1) * ns];
    let mut q = vec![0.0; nh * ns * na];
    for h in (0..nh).rev() {
        let (head, tail) = v.split_at_mut((h + 1) * ns);
        let v_next = &tail[..ns];
        for s in 0..ns {
            for a in 0..na {
                q[(h * ns + s) * na + a] = backup(mdp, h, s, a, v_next);
            }
            head[h * ns + s] = q[(h * ns + s) * na + pi.action(h, s)];
        }
    }
    Ok(PolicyValues {
        states: ns,
        actions: na,
        v,
        q,
    })
}

/// Value at the initial state of the uniform mixture over `policies`.
pub fn mixture_value(mdp: &LinearMdp, policies: &[DeterministicPolicy]) -> Result<f64> {
    if policies.is_empty() {
        return Err(invalid("mixture over an empty policy list"));
    }
    let s1 = mdp.initial_state();
    let mut total = 0.0;
    for pi in policies {
        total += policy_value(mdp, pi)?.v(0, s1);
    }
    Ok(total / policies.len() as f64)
}
