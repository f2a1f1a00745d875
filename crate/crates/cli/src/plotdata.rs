//! Cross-seed aggregates of a run directory, as flat CSV tables.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Result};
use lsvi_core::harness::{parse_metrics, threshold, RunFiles, RunMetrics};

use crate::summary_seeds;

fn stats(values: &mut [f64]) -> (f64, f64, f64, f64) {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    (mean, median, values[0], values[n - 1])
}

pub fn load_runs(dir: &Path) -> Result<Vec<RunMetrics>> {
    summary_seeds(dir)?
        .into_iter()
        .map(|seed| {
            let files = RunFiles::in_dir(dir, seed);
            let csv = std::fs::read_to_string(&files.metrics)?;
            let json = std::fs::read_to_string(&files.summary)?;
            Ok(parse_metrics(&csv, &json)?)
        })
        .collect()
}

/// Regret curve over the episodes common to all seeds.
pub fn regret_curve(runs: &[RunMetrics], stride: usize) -> String {
    let mut out = String::from("k,mean_cum_regret,median_cum_regret,min_cum_regret,max_cum_regret,mean_switches\n");
    let common = runs.iter().map(RunMetrics::episodes).min().unwrap_or(0);
    let stride = stride.max(1);
    for k in (1..=common).filter(|k| k % stride == 0 || *k == common) {
        let mut cum: Vec<f64> = runs.iter().map(|m| m.regret_at(k)).collect();
        let (mean, median, min, max) = stats(&mut cum);
        let switches = runs.iter().map(|m| m.switches_by(k) as f64).sum::<f64>() / runs.len() as f64;
        let _ = writeln!(out, "{k},{mean:.16e},{median:.16e},{min:.16e},{max:.16e},{switches:.16e}");
    }
    out
}

/// Mean bucket counts and bonus partial sums per `(h, n)`.
pub fn gap_buckets(runs: &[RunMetrics]) -> String {
    let mut out = String::from("h,n,threshold,mean_count,mean_bonus_sum\n");
    let first = &runs[0].gap_counts;
    for h in 0..first.horizon {
        for n in 0..first.buckets() {
            let count = runs.iter().map(|m| *m.gap_counts.get(h, n) as f64).sum::<f64>() / runs.len() as f64;
            let bonus = runs.iter().map(|m| *m.bonus_partial_sums.get(h, n)).sum::<f64>() / runs.len() as f64;
            let _ = writeln!(
                out,
                "{h},{n},{:.16e},{count:.16e},{bonus:.16e}",
                threshold(first.delta_min, n)
            );
        }
    }
    out
}

pub fn export(dir: &Path, out: &Path, stride: usize) -> Result<()> {
    let runs = load_runs(dir)?;
    let first = &runs[0].gap_counts;
    if runs.iter().any(|m| m.gap_counts.horizon != first.horizon || m.gap_counts.n_max != first.n_max) {
        bail!("runs in {} come from different instances", dir.display());
    }
    std::fs::create_dir_all(out)?;
    let curve = out.join("regret_curve.csv");
    let buckets = out.join("gap_buckets.csv");
    std::fs::write(&curve, regret_curve(&runs, stride))?;
    std::fs::write(&buckets, gap_buckets(&runs))?;
    println!("wrote {} and {} from {} seeds", curve.display(), buckets.display(), runs.len());
    Ok(())
}
