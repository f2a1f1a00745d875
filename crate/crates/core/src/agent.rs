//! LSVI-UCB++: weighted ridge regression with variance-adaptive weights,
//! optimistic and pessimistic value estimates, and a determinant-doubling
//! policy-switch rule.
//!
//! The agent never tabulates `Q` over states. Each policy switch appends one
//! [`StepTerm`] per step (regression weights plus a frozen copy of `Σ⁻¹`),
//! and `Q_opt(h,s,a)` is the running minimum of `H` and
//! `r + ŵ·φ + β‖φ‖_{Σ⁻¹}` over all terms at step `h`; `Q_pess` is the running
//! maximum of `0` and the `−β̄` counterpart. A per-`(h, s)` memo folds in
//! only the terms appended since it was last touched.
//!
//! Between switches the regression targets `V_{k,h+1}` are constant, so the
//! three target accumulators are updated incrementally; at a switch they are
//! rebuilt from the sample buffer for steps `H-1` down to `0` so that step
//! `h` regresses onto the already refreshed step `h+1`.

use std::collections::HashMap;
use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::env::{FeatureMap, Transition};
use crate::error::{invalid, Error, Result};
use crate::learner::{Learner, StepRecord};
use crate::linalg::{quad_with, SpdState};

pub const CHECKPOINT_FORMAT: &str = "lsvi-workbench/agent-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Float-safe form of `det Σ ≥ 2·det Σ_last`.
const SWITCH_THRESHOLD: f64 = LN_2 - 1e-12;

/// Third term of the adjusted variance `σ̄²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarSigmaFloor {
    /// `2d³H²·‖φ‖_{Σ⁻¹}`.
    #[default]
    AsWritten,
    /// `√(2d³H²·‖φ‖_{Σ⁻¹})`.
    SqrtNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub lambda: f64,
    pub c_beta: f64,
    pub c_bar_beta: f64,
    pub c_tilde_beta: f64,
    /// Failure probability used inside the radii.
    pub delta: f64,
    /// Episode budget `K`; the radii use `T = H·K`.
    pub episodes: usize,
    #[serde(default)]
    pub bar_sigma_floor: BarSigmaFloor,
    /// Compare incremental regressions against a from-scratch solve at every switch.
    #[serde(default)]
    pub audit_regression: bool,
}

impl AgentConfig {
    /// `λ = 1/H²`, unit radius multipliers and `δ = 1/(18T)`.
    pub fn new(horizon: usize, episodes: usize) -> Self {
        let h = horizon.max(1) as f64;
        let t = (horizon * episodes).max(1) as f64;
        Self {
            lambda: 1.0 / (h * h),
            c_beta: 1.0,
            c_bar_beta: 1.0,
            c_tilde_beta: 1.0,
            delta: 1.0 / (18.0 * t),
            episodes,
            bar_sigma_floor: BarSigmaFloor::AsWritten,
            audit_regression: false,
        }
    }

    pub fn with_multipliers(mut self, c_beta: f64, c_bar_beta: f64, c_tilde_beta: f64) -> Self {
        self.c_beta = c_beta;
        self.c_bar_beta = c_bar_beta;
        self.c_tilde_beta = c_tilde_beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("c_beta", self.c_beta),
            ("c_bar_beta", self.c_bar_beta),
            ("c_tilde_beta", self.c_tilde_beta),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// Confidence radii `(β, β̄, β̃)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Radii {
    pub beta: f64,
    pub bar_beta: f64,
    pub tilde_beta: f64,
}

/// Radii for dimension `d`, horizon `H` and `T` total steps.
pub fn radii(cfg: &AgentConfig, dim: usize, horizon: usize, total_steps: f64) -> Result<Radii> {
    cfg.validate()?;
    if dim == 0 || horizon == 0 {
        return Err(invalid("dimension and horizon must be positive"));
    }
    let d = dim as f64;
    let h = horizon as f64;
    let lam = cfg.lambda;
    let ratio = d * total_steps / (cfg.delta * lam);
    let log_beta = (1.0 + ratio).ln();
    let log_rest = ratio.ln();
    let reg = (d * lam).sqrt();
    Ok(Radii {
        beta: cfg.c_beta * (h * reg + (d * log_beta * log_beta).sqrt()),
        bar_beta: cfg.c_bar_beta * (h * reg + (d.powi(3) * h * h * log_rest * log_rest).sqrt()),
        tilde_beta: cfg.c_tilde_beta
            * (h * h * reg + (d.powi(3) * h.powi(4) * log_rest * log_rest).sqrt()),
    })
}

/// A sample in the regression buffer of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub phi: Vec<f64>,
    pub s_next: usize,
    pub inv_weight: f64,
}

/// Parameters frozen at a policy switch for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTerm {
    pub w_hat: DVector<f64>,
    pub w_check: DVector<f64>,
    pub sigma_inv: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLearner {
    prec: SpdState,
    buffer: Vec<Sample>,
    b_hat: DVector<f64>,
    b_check: DVector<f64>,
    b_tilde: DVector<f64>,
    log_det_at_last_switch: f64,
    terms: Vec<StepTerm>,
}

impl StepLearner {
    fn new(dim: usize, lambda: f64) -> Result<Self> {
        let prec = SpdState::new(dim, lambda)?;
        let log_det = prec.log_det();
        Ok(Self {
            prec,
            buffer: Vec::new(),
            b_hat: DVector::zeros(dim),
            b_check: DVector::zeros(dim),
            b_tilde: DVector::zeros(dim),
            log_det_at_last_switch: log_det,
            terms: Vec::new(),
        })
    }

    pub fn prec(&self) -> &SpdState {
        &self.prec
    }

    pub fn buffer(&self) -> &[Sample] {
        &self.buffer
    }

    pub fn b_hat(&self) -> &DVector<f64> {
        &self.b_hat
    }

    pub fn b_check(&self) -> &DVector<f64> {
        &self.b_check
    }

    pub fn b_tilde(&self) -> &DVector<f64> {
        &self.b_tilde
    }

    pub fn log_det_at_last_switch(&self) -> f64 {
        self.log_det_at_last_switch
    }

    pub fn terms(&self) -> &[StepTerm] {
        &self.terms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSnapshot {
    pub epoch_id: usize,
    /// Episode at whose start the snapshot was taken (0 for the initial epoch).
    pub episode_created: usize,
}

/// Components of the variance estimate for one `(h, φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub quad: f64,
    pub variance: f64,
    pub e_term: f64,
    pub d_term: f64,
    pub sigma_sq: f64,
    pub sigma_bar_sq: f64,
}

/// Worst disagreement seen between incremental and from-scratch regressions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionAudit {
    pub checks: usize,
    pub max_rel_err_targets: f64,
    pub max_rel_err_weights: f64,
}

#[derive(Debug, Clone)]
struct CachedRow {
    applied: usize,
    opt: Vec<f64>,
    pess: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LsviUcbPlusPlus {
    cfg: AgentConfig,
    dim: usize,
    horizon: usize,
    num_actions: usize,
    radii: Radii,
    steps: Vec<StepLearner>,
    snapshots: Vec<EpochSnapshot>,
    episode: usize,
    next_step: usize,
    audit: RegressionAudit,
    #[serde(skip)]
    cache: Mutex<HashMap<(usize, usize), CachedRow>>,
}

impl Clone for LsviUcbPlusPlus {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            dim: self.dim,
            horizon: self.horizon,
            num_actions: self.num_actions,
            radii: self.radii,
            steps: self.steps.clone(),
            snapshots: self.snapshots.clone(),
            episode: self.episode,
            next_step: self.next_step,
            audit: self.audit,
            cache: Mutex::new(self.cache.lock().clone()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    format: String,
    version: u32,
    agent: T,
}

impl LsviUcbPlusPlus {
    pub fn new<F: FeatureMap>(cfg: AgentConfig, env: &F) -> Result<Self> {
        Self::with_dims(cfg, env.dim(), env.horizon(), env.num_actions())
    }

    pub fn with_dims(cfg: AgentConfig, dim: usize, horizon: usize, num_actions: usize) -> Result<Self> {
        if num_actions == 0 {
            return Err(invalid("need at least one action"));
        }
        let total_steps = (horizon * cfg.episodes) as f64;
        let radii = radii(&cfg, dim, horizon, total_steps)?;
        let steps = (0..horizon)
            .map(|_| StepLearner::new(dim, cfg.lambda))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            dim,
            horizon,
            num_actions,
            radii,
            steps,
            snapshots: vec![EpochSnapshot {
                epoch_id: 0,
                episode_created: 0,
            }],
            episode: 0,
            next_step: 0,
            audit: RegressionAudit::default(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn radii(&self) -> Radii {
        self.radii
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn step(&self, h: usize) -> &StepLearner {
        &self.steps[h]
    }

    pub fn snapshots(&self) -> &[EpochSnapshot] {
        &self.snapshots
    }

    /// Index of the current epoch; increases by one at every switch.
    pub fn epoch(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn regression_audit(&self) -> RegressionAudit {
        self.audit
    }

    pub fn q_opt<F: FeatureMap>(&self, env: &F, h: usize, s: usize, a: usize) -> f64 {
        self.with_row(env, h, s, |row| row.opt[a])
    }

    pub fn q_pess<F: FeatureMap>(&self, env: &F, h: usize, s: usize, a: usize) -> f64 {
        self.with_row(env, h, s, |row| row.pess[a])
    }

    /// `max_a Q_opt(h, s, a)`, zero past the horizon.
    pub fn v_opt<F: FeatureMap>(&self, env: &F, h: usize, s: usize) -> f64 {
        if h >= self.horizon {
            return 0.0;
        }
        self.with_row(env, h, s, |row| row.opt.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn v_pess<F: FeatureMap>(&self, env: &F, h: usize, s: usize) -> f64 {
        if h >= self.horizon {
            return 0.0;
        }
        self.with_row(env, h, s, |row| row.pess.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    fn with_row<F: FeatureMap, R>(&self, env: &F, h: usize, s: usize, f: impl FnOnce(&CachedRow) -> R) -> R {
        let horizon = self.horizon as f64;
        let terms = &self.steps[h].terms;
        let mut cache = self.cache.lock();
        let row = cache.entry((h, s)).or_insert_with(|| CachedRow {
            applied: 0,
            opt: vec![horizon; self.num_actions],
            pess: vec![0.0; self.num_actions],
        });
        for term in &terms[row.applied..] {
            for a in 0..self.num_actions {
                let phi = env.feature(s, a);
                let r = env.reward(h, s, a);
                let width = quad_with(&term.sigma_inv, phi).sqrt();
                let up = r + dot(&term.w_hat, phi) + self.radii.beta * width;
                let down = r + dot(&term.w_check, phi) - self.radii.bar_beta * width;
                row.opt[a] = row.opt[a].min(up);
                row.pess[a] = row.pess[a].max(down);
            }
        }
        row.applied = terms.len();
        f(row)
    }

    /// Variance estimate at the current precision of step `h`, using the
    /// episode-level regression weights `Σ⁻¹ b`.
    pub fn estimate_variance(&self, h: usize, phi: &[f64]) -> Result<VarianceEstimate> {
        let step = &self.steps[h];
        // Σ⁻¹ is symmetric, so (Σ⁻¹b)·φ = b·(Σ⁻¹φ).
        let u = step.prec.solve(phi)?;
        let quad = DVector::from_column_slice(phi).dot(&u).max(0.0);
        let width = quad.sqrt();
        let hat = step.b_hat.dot(&u);
        let check = step.b_check.dot(&u);
        let tilde = step.b_tilde.dot(&u);

        let hf = self.horizon as f64;
        let h2 = hf * hf;
        let d3 = (self.dim as f64).powi(3);
        let Radii {
            bar_beta,
            tilde_beta,
            ..
        } = self.radii;

        let variance = tilde.clamp(0.0, h2) - (hat * hat).clamp(0.0, h2);
        let e_term = (tilde_beta * width).min(h2) + (2.0 * hf * bar_beta * width).min(h2);
        let d_term = (4.0 * d3 * h2 * (hat - check + 2.0 * bar_beta * width))
            .min(d3 * h2 * hf)
            .max(0.0);
        let sigma_sq = variance + e_term + d_term + hf;
        let floor = match self.cfg.bar_sigma_floor {
            BarSigmaFloor::AsWritten => 2.0 * d3 * h2 * width,
            BarSigmaFloor::SqrtNorm => (2.0 * d3 * h2 * width).sqrt(),
        };
        let sigma_bar_sq = sigma_sq.max(hf).max(floor);
        Ok(VarianceEstimate {
            quad,
            variance,
            e_term,
            d_term,
            sigma_sq,
            sigma_bar_sq,
        })
    }

    pub fn observe<F: FeatureMap>(&mut self, env: &F, k: usize, t: &Transition) -> Result<StepRecord> {
        if self.episode == 0 || k != self.episode || t.h != self.next_step {
            return Err(Error::ProtocolViolation(format!(
                "observe(k={k}, h={}) but expected (k={}, h={})",
                t.h, self.episode, self.next_step
            )));
        }
        if t.a >= self.num_actions {
            return Err(invalid(format!("action {} out of range", t.a)));
        }
        let h = t.h;
        let phi = env.feature(t.s, t.a);
        let est = self.estimate_variance(h, phi)?;
        let w = est.sigma_bar_sq.recip();
        let v = self.v_opt(env, h + 1, t.s_next);
        let v_check = self.v_pess(env, h + 1, t.s_next);

        let step = &mut self.steps[h];
        for (j, x) in phi.iter().enumerate() {
            step.b_hat[j] += w * x * v;
            step.b_check[j] += w * x * v_check;
            step.b_tilde[j] += w * x * (v * v);
        }
        step.prec.rank_one_update(phi, w)?;
        step.buffer.push(Sample {
            phi: phi.to_vec(),
            s_next: t.s_next,
            inv_weight: w,
        });
        self.next_step += 1;
        Ok(StepRecord {
            h,
            s: t.s,
            a: t.a,
            s_next: t.s_next,
            quad: est.quad,
            sigma_sq: est.sigma_sq,
            sigma_bar_sq: est.sigma_bar_sq,
            inv_weight: w,
        })
    }

    /// Whether the next [`maybe_switch`](Self::maybe_switch) will fire.
    pub fn switch_pending(&self) -> bool {
        self.steps
            .iter()
            .any(|st| st.prec.log_det() - st.log_det_at_last_switch >= SWITCH_THRESHOLD)
    }

    /// Evaluate the switch trigger at the start of episode `k` and, if it
    /// fires, refresh every step's regression and append a snapshot.
    pub fn maybe_switch<F: FeatureMap>(&mut self, env: &F, k: usize) -> Result<bool> {
        let previous_done = self.episode == 0 || self.next_step == self.horizon;
        if k != self.episode + 1 || !previous_done {
            return Err(Error::ProtocolViolation(format!(
                "maybe_switch(k={k}) after episode {} at step {}",
                self.episode, self.next_step
            )));
        }
        self.episode = k;
        self.next_step = 0;

        if !self.switch_pending() {
            return Ok(false);
        }
        if self.cfg.audit_regression {
            self.audit_against_scratch(env);
        }
        for h in (0..self.horizon).rev() {
            let (b_hat, b_check, b_tilde) = self.targets_from_scratch(env, h);
            let step = &mut self.steps[h];
            let w_hat = step.prec.solve_vec(&b_hat)?;
            let w_check = step.prec.solve_vec(&b_check)?;
            step.b_hat = b_hat;
            step.b_check = b_check;
            step.b_tilde = b_tilde;
            step.terms.push(StepTerm {
                w_hat,
                w_check,
                sigma_inv: step.prec.sigma_inv().clone(),
            });
        }
        for step in &mut self.steps {
            step.log_det_at_last_switch = step.prec.log_det();
        }
        self.snapshots.push(EpochSnapshot {
            epoch_id: self.snapshots.len(),
            episode_created: k,
        });
        Ok(true)
    }

    /// `Σ_i σ̄⁻²·φ_i·{V, V̌, V²}(s'_i)` over the buffer of step `h` with the
    /// value functions currently in force at step `h + 1`.
    pub fn targets_from_scratch<F: FeatureMap>(
        &self,
        env: &F,
        h: usize,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let mut b_hat = DVector::zeros(self.dim);
        let mut b_check = DVector::zeros(self.dim);
        let mut b_tilde = DVector::zeros(self.dim);
        for sample in &self.steps[h].buffer {
            let v = self.v_opt(env, h + 1, sample.s_next);
            let v_check = self.v_pess(env, h + 1, sample.s_next);
            let w = sample.inv_weight;
            for (j, x) in sample.phi.iter().enumerate() {
                b_hat[j] += w * x * v;
                b_check[j] += w * x * v_check;
                b_tilde[j] += w * x * (v * v);
            }
        }
        (b_hat, b_check, b_tilde)
    }

    /// Compare the incremental accumulators and weights of every step with a
    /// from-scratch rebuild and fold the result into [`regression_audit`](Self::regression_audit).
    ///
    /// Runs automatically before each switch when `audit_regression` is set.
    /// Value functions only change at a switch, so the comparison is also
    /// valid between switches.
    pub fn audit_against_scratch<F: FeatureMap>(&mut self, env: &F) {
        let mut audit = self.audit;
        for h in 0..self.horizon {
            let (b_hat, b_check, b_tilde) = self.targets_from_scratch(env, h);
            let step = &self.steps[h];
            for (inc, scratch) in [
                (&step.b_hat, &b_hat),
                (&step.b_check, &b_check),
                (&step.b_tilde, &b_tilde),
            ] {
                audit.max_rel_err_targets = audit.max_rel_err_targets.max(rel_err(inc, scratch));
            }
            // Independent path: rebuild Σ from the buffer and solve by Cholesky.
            let mut gram = DMatrix::identity(self.dim, self.dim) * self.cfg.lambda;
            for sample in &step.buffer {
                let phi = DVector::from_column_slice(&sample.phi);
                gram += sample.inv_weight * &phi * phi.transpose();
            }
            if let Some(chol) = gram.cholesky() {
                for (inc_b, scratch_b) in [(&step.b_hat, &b_hat), (&step.b_check, &b_check)] {
                    let inc_w = step.prec.sigma_inv() * inc_b;
                    let direct = chol.solve(scratch_b);
                    audit.max_rel_err_weights = audit.max_rel_err_weights.max(rel_err(&inc_w, &direct));
                }
            }
            audit.checks += 1;
        }
        self.audit = audit;
    }

    pub fn to_checkpoint(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            agent: self,
        })?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let ck: Checkpoint<Self> = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Ok(ck.agent)
    }
}

impl Learner for LsviUcbPlusPlus {
    fn begin_episode<F: FeatureMap>(&mut self, env: &F, k: usize) -> Result<bool> {
        self.maybe_switch(env, k)
    }

    fn q_value<F: FeatureMap>(&self, env: &F, h: usize, s: usize, a: usize) -> f64 {
        self.q_opt(env, h, s, a)
    }

    fn q_lower<F: FeatureMap>(&self, env: &F, h: usize, s: usize, a: usize) -> Option<f64> {
        Some(self.q_pess(env, h, s, a))
    }

    fn observe<F: FeatureMap>(&mut self, env: &F, k: usize, t: &Transition) -> Result<StepRecord> {
        LsviUcbPlusPlus::observe(self, env, k, t)
    }

    fn bonus_radius(&self) -> f64 {
        self.radii.beta
    }

    fn switch_count(&self) -> usize {
        self.epoch()
    }
}

pub(crate) fn dot(w: &DVector<f64>, phi: &[f64]) -> f64 {
    w.iter().zip(phi).map(|(a, b)| a * b).sum()
}

/// `‖x − y‖∞ / ‖y‖∞`, zero when both vanish.
pub fn rel_err(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let diff = (x - y).amax();
    let scale = y.amax();
    if diff == 0.0 {
        0.0
    } else if scale == 0.0 {
        f64::INFINITY
    } else {
        diff / scale
    }
}
