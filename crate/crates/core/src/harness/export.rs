//! CSV and JSON outputs of a run, and their exact parsers.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which is enough for every `f64` to read back bit-identically.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::audit::BonusAudit;
use super::metrics::{GapTable, OptimismStats, RunMetrics};
use super::recorder::TraceEntry;
use super::{ConcurrentOutcome, ExperimentConfig, SeedRun};
use crate::agent::RegressionAudit;
use crate::concurrent::RoundLog;
use crate::error::{Error, Result};

pub const SUMMARY_FORMAT: &str = "lsvi-workbench/run-summary";
pub const SUMMARY_VERSION: u32 = 1;

const METRICS_HEADER: &str = "k,regret,cum_regret,switches_so_far,sigma_sq_sum";
const TRACE_HEADER: &str = "k,h,s,a,quad,sigma_sq,inv_weight,buckets";

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per episode.
pub fn metrics_csv(m: &RunMetrics) -> String {
    let mut out = String::with_capacity(64 * (m.episodes() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    let mut switches = 0;
    for k in 1..=m.episodes() {
        while switches < m.switch_episodes.len() && m.switch_episodes[switches] <= k {
            switches += 1;
        }
        let _ = writeln!(
            out,
            "{k},{},{},{switches},{}",
            float(m.per_episode_regret[k - 1]),
            float(m.cumulative_regret[k - 1]),
            float(m.variance_sums[k - 1]),
        );
    }
    out
}

pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut out = String::with_capacity(96 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for e in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.k,
            e.h,
            e.s,
            e.a,
            float(e.quad),
            float(e.sigma_sq),
            float(e.inv_weight),
            e.buckets
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: Option<ExperimentConfig>,
    pub episodes: usize,
    pub total_regret: f64,
    pub switch_episodes: Vec<usize>,
    pub gap_counts: GapTable<u64>,
    pub bonus_partial_sums: GapTable<f64>,
    pub rounds: Vec<RoundLog>,
    pub optimism: Option<OptimismStats>,
    pub audits: Vec<BonusAudit>,
    pub regression: Option<RegressionAudit>,
    pub concurrent: Option<ConcurrentOutcome>,
}

impl RunSummary {
    pub fn new(run: &SeedRun, config: Option<&ExperimentConfig>) -> Self {
        let m = &run.metrics;
        Self {
            format: SUMMARY_FORMAT.to_string(),
            version: SUMMARY_VERSION,
            seed: run.seed,
            config: config.cloned(),
            episodes: m.episodes(),
            total_regret: m.total_regret(),
            switch_episodes: m.switch_episodes.clone(),
            gap_counts: m.gap_counts.clone(),
            bonus_partial_sums: m.bonus_partial_sums.clone(),
            rounds: m.rounds.clone(),
            optimism: m.optimism,
            audits: run.audits.clone(),
            regression: run.regression,
            concurrent: run.concurrent,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        if s.format != SUMMARY_FORMAT || s.version != SUMMARY_VERSION {
            return Err(Error::Format(format!(
                "unsupported summary {} v{}",
                s.format, s.version
            )));
        }
        Ok(s)
    }
}

pub struct EpisodeRows {
    pub regret: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub switches_so_far: Vec<usize>,
    pub variance_sums: Vec<f64>,
}

fn field<T: std::str::FromStr>(line: usize, raw: Option<&str>) -> Result<T> {
    raw.and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("line {line}: missing or malformed field")))
}

pub fn parse_metrics_csv(text: &str) -> Result<EpisodeRows> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format("unexpected metrics header".into()));
    }
    let mut rows = EpisodeRows {
        regret: Vec::new(),
        cumulative: Vec::new(),
        switches_so_far: Vec::new(),
        variance_sums: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let mut it = line.split(',');
        let k: usize = field(n, it.next())?;
        if k != i + 1 {
            return Err(Error::Format(format!("line {n}: episode {k} out of order")));
        }
        rows.regret.push(field(n, it.next())?);
        rows.cumulative.push(field(n, it.next())?);
        rows.switches_so_far.push(field(n, it.next())?);
        rows.variance_sums.push(field(n, it.next())?);
        if it.next().is_some() {
            return Err(Error::Format(format!("line {n}: too many fields")));
        }
    }
    Ok(rows)
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceEntry>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::Format("unexpected trace header".into()));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let mut it = line.split(',');
        out.push(TraceEntry {
            k: field(n, it.next())?,
            h: field(n, it.next())?,
            s: field(n, it.next())?,
            a: field(n, it.next())?,
            quad: field(n, it.next())?,
            sigma_sq: field(n, it.next())?,
            inv_weight: field(n, it.next())?,
            buckets: field(n, it.next())?,
        });
        if it.next().is_some() {
            return Err(Error::Format(format!("line {n}: too many fields")));
        }
    }
    Ok(out)
}

/// Rebuild [`RunMetrics`] from the episode CSV and the JSON summary.
pub fn parse_metrics(csv: &str, summary_json: &str) -> Result<RunMetrics> {
    let rows = parse_metrics_csv(csv)?;
    let summary = RunSummary::from_json(summary_json)?;
    if rows.regret.len() != summary.episodes {
        return Err(Error::Format(format!(
            "csv has {} episodes, summary says {}",
            rows.regret.len(),
            summary.episodes
        )));
    }
    let metrics = RunMetrics {
        per_episode_regret: rows.regret,
        cumulative_regret: rows.cumulative,
        gap_counts: summary.gap_counts,
        switch_episodes: summary.switch_episodes,
        variance_sums: rows.variance_sums,
        bonus_partial_sums: summary.bonus_partial_sums,
        rounds: summary.rounds,
        optimism: summary.optimism,
    };
    for (k, &s) in rows.switches_so_far.iter().enumerate() {
        if metrics.switches_by(k + 1) != s {
            return Err(Error::Format(format!(
                "episode {}: switch count disagrees with summary",
                k + 1
            )));
        }
    }
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub trace: PathBuf,
}

impl RunFiles {
    pub fn in_dir(dir: &Path, seed: u64) -> Self {
        Self {
            metrics: dir.join(format!("metrics_seed{seed}.csv")),
            summary: dir.join(format!("summary_seed{seed}.json")),
            trace: dir.join(format!("trace_seed{seed}.csv")),
        }
    }
}

pub fn write_run(dir: &Path, run: &SeedRun, config: Option<&ExperimentConfig>) -> Result<RunFiles> {
    let files = RunFiles::in_dir(dir, run.seed);
    std::fs::write(&files.metrics, metrics_csv(&run.metrics))?;
    std::fs::write(&files.summary, RunSummary::new(run, config).to_json()?)?;
    std::fs::write(&files.trace, trace_csv(&run.trace))?;
    Ok(files)
}
