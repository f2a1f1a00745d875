//! Replay of the partial-bonus-sum inequality over gap buckets.
//!
//! For bucket `(h, n)` the episodes `k_1 < k_2 < …` are those whose visited
//! step `h` landed in the bucket. The surrogate precision `Σ'_i` starts at
//! `λI` and absorbs only those episodes' features with their regression
//! weights, so it is dominated by the learner's actual `Σ_{k_i,h}`.

use serde::{Deserialize, Serialize};

use super::recorder::TraceEntry;
use crate::env::FeatureMap;
use crate::error::Result;
use crate::linalg::SpdState;

/// Relative slack when checking `q_actual ≤ q_surrogate`.
const DOMINANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditParams {
    pub dim: usize,
    pub horizon: usize,
    pub lambda: f64,
    pub beta: f64,
    /// Episode budget used in `ι = ln(1 + K/(dλ))`.
    pub episodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BonusAudit {
    pub h: usize,
    pub n: usize,
    pub episodes: usize,
    pub left: f64,
    pub right: f64,
    /// `left / right`, zero for an empty bucket.
    pub slack: f64,
    /// Largest `q_actual / q_surrogate` over the bucket; at most 1 when the
    /// surrogate is dominated as expected.
    pub max_quad_ratio: f64,
    pub surrogate_dominated: bool,
}

impl BonusAudit {
    pub fn holds(&self) -> bool {
        self.left <= self.right
    }
}

/// Audit one bucket from its trace entries (in episode order).
pub fn surrogate_bonus_audit<F: FeatureMap>(
    env: &F,
    params: &AuditParams,
    h: usize,
    n: usize,
    entries: &[TraceEntry],
) -> Result<BonusAudit> {
    let d = params.dim as f64;
    let hf = params.horizon as f64;
    let c = hf;
    let beta = params.beta.max(1.0);
    let iota = (1.0 + params.episodes as f64 / (d * params.lambda)).ln();

    let mut surrogate = SpdState::new(params.dim, params.lambda)?;
    let mut left = 0.0;
    let mut variance_mass = 0.0;
    let mut max_ratio: f64 = 0.0;
    let mut dominated = true;
    for e in entries {
        let phi = env.feature(e.s, e.a);
        let q_sur = surrogate.quad_form(phi)?;
        if q_sur > 0.0 {
            max_ratio = max_ratio.max(e.quad / q_sur);
        }
        if e.quad > q_sur * (1.0 + DOMINANCE_TOL) {
            dominated = false;
        }
        left += (beta * e.quad.sqrt()).min(c);
        variance_mass += e.sigma_sq + hf;
        surrogate.rank_one_update(phi, e.inv_weight)?;
    }
    let right = if entries.is_empty() {
        0.0
    } else {
        4.0 * d.powi(3) * hf.powi(3) * c * iota
            + 10.0 * beta * d.powi(4) * hf * hf * iota
            + 2.0 * beta * (d * iota * variance_mass).sqrt()
    };
    Ok(BonusAudit {
        h,
        n,
        episodes: entries.len(),
        left,
        right,
        slack: if right > 0.0 { left / right } else { 0.0 },
        max_quad_ratio: max_ratio,
        surrogate_dominated: dominated,
    })
}

/// Audit every `(h, n)` bucket of a trace.
pub fn audit_all<F: FeatureMap>(
    env: &F,
    params: &AuditParams,
    buckets: usize,
    trace: &[TraceEntry],
) -> Result<Vec<BonusAudit>> {
    let mut out = Vec::with_capacity(params.horizon * buckets);
    for h in 0..params.horizon {
        for n in 0..buckets {
            let entries: Vec<TraceEntry> = trace
                .iter()
                .filter(|e| e.h == h && e.buckets > n)
                .copied()
                .collect();
            out.push(surrogate_bonus_audit(env, params, h, n, &entries)?);
        }
    }
    Ok(out)
}
