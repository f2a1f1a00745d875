//! `lsvi`: generate instances, run and sweep experiments, replay audits and
//! aggregate per-seed outputs for plotting.
//!
//! Exit status is 0 on success, 2 when a concurrent run ran out of rounds
//! before reaching its target accuracy, and 1 on any other error.

mod config;
mod plotdata;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lsvi_core::concurrent::RoundAccounting;
use lsvi_core::harness::{
    audit_all, audit_params, parse_trace_csv, run_seed, run_seeds, write_run, AgentKind, ConcurrentOutcome,
    ExperimentConfig, InstanceSpec, RunFiles, RunSummary, SeedRun,
};
use lsvi_core::oracle::optimal_values;
use lsvi_core::{Error, FeatureMap, LinearMdp, OracleTables};

use config::{ConfigArgs, InstanceArgs};

#[derive(Debug, Parser)]
#[command(name = "lsvi", version, about = "Experiments with LSVI-UCB++ on finite linear MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an instance and write it as JSON.
    Gen {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Destination file.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run one experiment (all of its seeds).
    Run(ConfigArgs),
    /// Run a grid of experiments over episode budgets, agent counts and gaps.
    Sweep {
        #[command(flatten)]
        base: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        grid_episodes: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid_agents: Vec<usize>,
        /// Target minimum gaps; needs a generated gap instance.
        #[arg(long, value_delimiter = ',')]
        grid_delta_min: Vec<f64>,
    },
    /// Replay the bonus audit and the round accounting from a run directory.
    Audit {
        dir: PathBuf,
    },
    /// Aggregate the per-seed outputs in a run directory into plot tables.
    ExportPlotdata {
        dir: PathBuf,
        /// Destination directory [default: the run directory].
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Keep every n-th episode row of the regret curve.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Gen { instance, out } => gen(&instance, &out).map(|()| ExitCode::SUCCESS),
        Command::Run(args) => run(&args.resolve()?),
        Command::Sweep {
            base,
            grid_episodes,
            grid_agents,
            grid_delta_min,
        } => sweep(&base.resolve()?, &grid_episodes, &grid_agents, &grid_delta_min),
        Command::Audit { dir } => audit(&dir),
        Command::ExportPlotdata { dir, out, stride } => {
            let out = out.unwrap_or_else(|| dir.clone());
            plotdata::export(&dir, &out, stride)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn gen(args: &InstanceArgs, out: &Path) -> Result<()> {
    let mdp = args.resolve(None)?.build()?;
    let oracle = optimal_values(&mdp)?;
    mdp.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "wrote {}: S={} A={} H={} d={} delta_min={:.6} V*(s1)={:.6}",
        out.display(),
        mdp.states(),
        mdp.num_actions(),
        mdp.horizon(),
        mdp.dim(),
        oracle.delta_min(),
        oracle.v_star(0, mdp.initial_state())
    );
    Ok(())
}

/// Result of one seed; exhausted concurrent runs keep their partial metrics.
enum SeedOutcome {
    Done(SeedRun),
    Exhausted(SeedRun),
}

fn run_one(cfg: &ExperimentConfig, mdp: &LinearMdp, oracle: &OracleTables, seed: u64) -> lsvi_core::Result<SeedOutcome> {
    match run_seed(cfg, mdp, oracle, seed) {
        Ok(run) => Ok(SeedOutcome::Done(run)),
        Err(Error::BudgetExhausted {
            rounds,
            mixture_gap,
            partial,
        }) => Ok(SeedOutcome::Exhausted(SeedRun {
            seed,
            metrics: *partial,
            trace: Vec::new(),
            audits: Vec::new(),
            regression: None,
            concurrent: Some(ConcurrentOutcome {
                agents: cfg.agents,
                rounds,
                mixture_gap: Some(mixture_gap),
                reached_epsilon: false,
            }),
        })),
        Err(e) => Err(e),
    }
}

/// Run every seed, write outputs and print one line per seed.
/// Returns the runs and whether any ran out of rounds.
fn execute(cfg: &ExperimentConfig) -> Result<(Vec<SeedRun>, bool)> {
    let mdp = cfg.instance.build()?;
    let oracle = optimal_values(&mdp)?;
    let outcomes = run_seeds(&cfg.seeds, |seed| run_one(cfg, &mdp, &oracle, seed))?;
    if let Some(dir) = &cfg.output {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut exhausted = false;
    for outcome in outcomes {
        let (run, done) = match outcome {
            SeedOutcome::Done(r) => (r, true),
            SeedOutcome::Exhausted(r) => (r, false),
        };
        exhausted |= !done;
        println!("{}", seed_line(&run, done));
        if let Some(dir) = &cfg.output {
            write_run(dir, &run, Some(cfg))?;
        }
        runs.push(run);
    }
    Ok((runs, exhausted))
}

fn seed_line(run: &SeedRun, done: bool) -> String {
    let m = &run.metrics;
    let mut line = format!(
        "seed {}: episodes {} regret {:.4} switches {}",
        run.seed,
        m.episodes(),
        m.total_regret(),
        m.switch_count()
    );
    if let Some(c) = run.concurrent {
        let gap = c.mixture_gap.map_or("-".to_string(), |g| format!("{g:.4}"));
        let _ = write!(line, " rounds {} mixture_gap {gap}", c.rounds);
    }
    if let Some(o) = m.optimism {
        let _ = write!(line, " optimism_violations {}/{}", o.violations, o.checked);
    }
    if let Some(a) = run.regression {
        let _ = write!(
            line,
            " regression_checks {} max_rel_err {:.2e}",
            a.checks,
            a.max_rel_err_targets.max(a.max_rel_err_weights)
        );
    }
    if !run.audits.is_empty() {
        let failed = run.audits.iter().filter(|a| !a.holds()).count();
        let _ = write!(line, " audit_failures {failed}");
    }
    if !done {
        line.push_str(" (round budget exhausted)");
    }
    line
}

fn run(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let (_, exhausted) = execute(cfg)?;
    Ok(if exhausted { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn sweep(base: &ExperimentConfig, episodes: &[usize], agents: &[usize], gaps: &[f64]) -> Result<ExitCode> {
    let root = base.output.clone().context("sweep needs an output directory (--output or $LSVI_OUT_DIR)")?;
    std::fs::create_dir_all(&root)?;
    let episodes = if episodes.is_empty() { vec![base.episodes] } else { episodes.to_vec() };
    let agents = if agents.is_empty() { vec![base.agents] } else { agents.to_vec() };
    let gaps: Vec<Option<f64>> = if gaps.is_empty() { vec![None] } else { gaps.iter().map(|g| Some(*g)).collect() };
    if gaps[0].is_some() && !matches!(base.instance, InstanceSpec::Gap { .. }) {
        bail!("--grid-delta-min needs a generated gap instance");
    }

    let mut table = String::from("episodes,agents,delta_min,seed,fed,total_regret,switches,rounds,mixture_gap,status\n");
    let mut exhausted = false;
    for &k in &episodes {
        for &m in &agents {
            for &gap in &gaps {
                let mut cfg = base.clone();
                cfg.episodes = k;
                cfg.agents = m;
                if let (Some(g), InstanceSpec::Gap { delta_min, .. }) = (gap, &mut cfg.instance) {
                    *delta_min = g;
                }
                let label = match gap {
                    Some(g) => format!("K{k}_M{m}_gap{g}"),
                    None => format!("K{k}_M{m}"),
                };
                println!("== {label}");
                cfg.output = Some(root.join(&label));
                let (runs, cell_exhausted) = execute(&cfg)?;
                exhausted |= cell_exhausted;
                let delta = match cfg.instance {
                    InstanceSpec::Gap { delta_min, .. } => delta_min.to_string(),
                    _ => String::new(),
                };
                for r in &runs {
                    let (rounds, gap, status) = match r.concurrent {
                        Some(c) => (
                            c.rounds.to_string(),
                            c.mixture_gap.map_or(String::new(), |g| format!("{g:.16e}")),
                            if c.reached_epsilon || cfg.epsilon.is_none() { "ok" } else { "exhausted" },
                        ),
                        None => (String::new(), String::new(), "ok"),
                    };
                    let _ = writeln!(
                        table,
                        "{k},{m},{delta},{},{},{:.16e},{},{rounds},{gap},{status}",
                        r.seed,
                        r.metrics.episodes(),
                        r.metrics.total_regret(),
                        r.metrics.switch_count()
                    );
                }
            }
        }
    }
    let path = root.join("sweep.csv");
    std::fs::write(&path, table)?;
    println!("wrote {}", path.display());
    Ok(if exhausted { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

/// Seeds that have a summary file in `dir`, in increasing order.
pub fn summary_seeds(dir: &Path) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(seed) = name.strip_prefix("summary_seed").and_then(|s| s.strip_suffix(".json")) {
            if let Ok(seed) = seed.parse() {
                seeds.push(seed);
            }
        }
    }
    seeds.sort_unstable();
    if seeds.is_empty() {
        bail!("no summary_seed*.json files in {}", dir.display());
    }
    Ok(seeds)
}

fn audit(dir: &Path) -> Result<ExitCode> {
    let mut failures = 0;
    for seed in summary_seeds(dir)? {
        let files = RunFiles::in_dir(dir, seed);
        let summary = RunSummary::from_json(&std::fs::read_to_string(&files.summary)?)?;
        let cfg = summary
            .config
            .as_ref()
            .with_context(|| format!("{} has no config echo", files.summary.display()))?;
        let mdp = cfg.instance.build()?;
        let trace = parse_trace_csv(&std::fs::read_to_string(&files.trace)?)?;
        let params = audit_params(cfg, &mdp)?;
        let replay = audit_all(&mdp, &params, summary.gap_counts.buckets(), &trace)?;

        let held = replay.iter().filter(|a| a.holds()).count();
        let max_slack = replay.iter().map(|a| a.slack).fold(0.0, f64::max);
        let matches = summary.audits.is_empty() || replay == summary.audits;
        let mut ok = held == replay.len() && matches;
        let mut line = format!(
            "seed {seed}: bonus audit {held}/{} buckets hold, max left/right {max_slack:.3e}, matches stored: {matches}",
            replay.len()
        );
        if cfg.agent == AgentKind::Concurrent {
            let acc = RoundAccounting::from_log(&summary.rounds, cfg.agents);
            ok &= acc.identity_holds() && acc.bound_holds();
            let _ = write!(
                line,
                "; rounds {} = sum ceil(e_t/M) {}: {}, bound {}: {}",
                acc.rounds,
                acc.segment_rounds,
                acc.identity_holds(),
                acc.bound,
                acc.bound_holds()
            );
        }
        println!("{line}");
        failures += usize::from(!ok);
    }
    if failures > 0 {
        bail!("{failures} run(s) failed the audit");
    }
    Ok(ExitCode::SUCCESS)
}
