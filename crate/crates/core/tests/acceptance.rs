//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs with `harness = false` so the report is always printed; the process
//! exits non-zero if any criterion fails. Tolerances are pinned below.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use lsvi_core::concurrent::RoundAccounting;
use lsvi_core::env::TabularModel;
use lsvi_core::harness::{
    metrics_csv, parse_metrics, run_experiment, run_seed, trace_csv, AgentKind, ExperimentConfig, InstanceSpec,
    AnyLearner, RunSession, RunSummary, SeedRun,
};
use lsvi_core::agent::RegressionAudit;
use lsvi_core::oracle::{optimal_values, policy_value, GAP_EPS};
use lsvi_core::rng::agent_stream;
use lsvi_core::{Error, FeatureMap, LinearMdp, RoundLog, SpdState};
use nalgebra::DMatrix;
use rand::Rng;

const ORACLE_TOL: f64 = 1e-12;
const LINALG_TOL: f64 = 1e-6;
const REGRESSION_TOL: f64 = 1e-6;
const OPTIMISM_MAX_FRACTION: f64 = 0.01;
const FLATTEN_FACTOR: f64 = 0.25;
const GAP_RATIO: f64 = 2.0;
const SPEEDUP_FACTOR: f64 = 0.5;

/// Calibrated bonus multiplier for the regret-trend runs. With unit
/// multipliers every optimistic value stays clipped at `H` for far longer
/// than 20 000 episodes on these instances, so no trend is visible.
const TREND_C: f64 = 0.005;
const SPEEDUP_C: f64 = 0.01;

struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn add(&mut self, n: usize, pass: bool, detail: String) {
        println!("criterion {n:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((n, pass, detail));
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// ---------------------------------------------------------------- criterion 1

fn random_model(seed: u64) -> TabularModel {
    let mut rng = agent_stream(seed, 101);
    let ns = rng.gen_range(2..=6);
    let na = rng.gen_range(2..=4);
    let nh = rng.gen_range(1..=5);
    let mut transition = Vec::with_capacity(nh * ns * na * ns);
    for _ in 0..nh * ns * na {
        // Some rows are sparse so that ties and zero-probability successors occur.
        let raw: Vec<f64> = (0..ns)
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() })
            .collect();
        let t: f64 = raw.iter().sum();
        if t == 0.0 {
            let j = rng.gen_range(0..ns);
            transition.extend((0..ns).map(|i| if i == j { 1.0 } else { 0.0 }));
        } else {
            transition.extend(raw.into_iter().map(|x| x / t));
        }
    }
    TabularModel {
        states: ns,
        actions: na,
        horizon: nh,
        initial_state: rng.gen_range(0..ns),
        transition,
        reward: (0..nh * ns * na).map(|_| rng.gen()).collect(),
    }
}

/// Plain backward induction on the tabular arrays, independent of the crate.
fn reference_q(m: &TabularModel) -> Vec<f64> {
    let (ns, na, nh) = (m.states, m.actions, m.horizon);
    let mut q = vec![0.0; nh * ns * na];
    let mut v_next = vec![0.0; ns];
    for h in (0..nh).rev() {
        let mut v = vec![f64::NEG_INFINITY; ns];
        for s in 0..ns {
            for a in 0..na {
                let i = (h * ns + s) * na + a;
                let ev: f64 = (0..ns).map(|j| m.transition[i * ns + j] * v_next[j]).sum();
                q[i] = m.reward[i] + ev;
                v[s] = v[s].max(q[i]);
            }
        }
        v_next = v;
    }
    q
}

fn permute(m: &TabularModel, perm: &[usize]) -> TabularModel {
    let (ns, na) = (m.states, m.actions);
    let mut out = m.clone();
    out.initial_state = perm[m.initial_state];
    for h in 0..m.horizon {
        for s in 0..ns {
            for a in 0..na {
                let src = (h * ns + s) * na + a;
                let dst = (h * ns + perm[s]) * na + a;
                out.reward[dst] = m.reward[src];
                for j in 0..ns {
                    out.transition[dst * ns + perm[j]] = m.transition[src * ns + j];
                }
            }
        }
    }
    out
}

fn criterion_1(report: &mut Report) {
    let start = Instant::now();
    let mut worst_ref: f64 = 0.0;
    let mut worst_perm: f64 = 0.0;
    let mut worst_greedy: f64 = 0.0;
    let mut gap_ok = true;
    let mut err = None;
    for seed in 0..20u64 {
        let model = random_model(seed);
        let (ns, na, nh) = (model.states, model.actions, model.horizon);
        let mut run = || -> lsvi_core::Result<()> {
            let mdp = LinearMdp::from_tabular(&model)?;
            let t = optimal_values(&mdp)?;
            let q_ref = reference_q(&model);

            let mut rng = agent_stream(seed, 202);
            let mut perm: Vec<usize> = (0..ns).collect();
            for i in (1..ns).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let tp = optimal_values(&LinearMdp::from_tabular(&permute(&model, &perm))?)?;
            let greedy = policy_value(&mdp, &t.greedy_policy())?;

            let mut positive = Vec::new();
            for h in 0..nh {
                for s in 0..ns {
                    let mut vmax = f64::NEG_INFINITY;
                    let mut min_gap = f64::INFINITY;
                    for a in 0..na {
                        let q = t.q_star(h, s, a);
                        worst_ref = worst_ref.max((q - q_ref[(h * ns + s) * na + a]).abs());
                        worst_perm = worst_perm.max((q - tp.q_star(h, perm[s], a)).abs());
                        vmax = vmax.max(q);
                        let g = t.gap(h, s, a);
                        min_gap = min_gap.min(g);
                        gap_ok &= g >= 0.0 && (g - (t.v_star(h, s) - q)).abs() <= ORACLE_TOL;
                        if g > GAP_EPS {
                            positive.push(g);
                        }
                    }
                    gap_ok &= t.v_star(h, s) == vmax && min_gap == 0.0;
                    gap_ok &= t.v_star(h, s) <= (nh - h) as f64 + ORACLE_TOL;
                    worst_greedy = worst_greedy.max((greedy.v(h, s) - t.v_star(h, s)).abs());
                }
            }
            let expected_min = positive.iter().copied().fold(f64::INFINITY, f64::min);
            if expected_min.is_finite() {
                gap_ok &= t.delta_min() == expected_min;
            }
            Ok(())
        };
        if let Err(e) = run() {
            err = Some(format!("seed {seed}: {e}"));
            break;
        }
    }
    let elapsed = start.elapsed();
    let pass = err.is_none()
        && worst_ref <= ORACLE_TOL
        && worst_perm <= ORACLE_TOL
        && worst_greedy <= ORACLE_TOL
        && gap_ok
        && elapsed < Duration::from_secs(1);
    report.add(
        1,
        pass,
        format!(
            "20 instances: |Q*-ref|={worst_ref:.1e} perm={worst_perm:.1e} greedy={worst_greedy:.1e} \
             gaps_ok={gap_ok} err={err:?} in {} (tol {ORACLE_TOL:e}, limit 1s)",
            secs(elapsed)
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2(report: &mut Report) {
    let start = Instant::now();
    let (d, horizon) = (16usize, 4usize);
    let lambda = 1.0 / (horizon * horizon) as f64;
    // Regression weights are 1/σ̄² with σ̄² between H and roughly 3·d³·H³.
    let w_max = 1.0 / horizon as f64;
    let w_min = 1.0 / (3.0 * (d as f64).powi(3) * (horizon as f64).powi(3));
    let mut state = SpdState::new(d, lambda).expect("valid dims");
    let mut sigma = DMatrix::<f64>::identity(d, d) * lambda;
    let mut rng = agent_stream(2, 0);
    for _ in 0..10_000 {
        let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = rng.gen_range(0.05..1.0) / norm;
        let phi: Vec<f64> = raw.iter().map(|x| x * scale).collect();
        let w = (w_min.ln() + rng.gen::<f64>() * (w_max.ln() - w_min.ln())).exp();
        state.rank_one_update(&phi, w).expect("valid update");
        for i in 0..d {
            for j in 0..d {
                sigma[(i, j)] += w * phi[i] * phi[j];
            }
        }
    }
    let direct_inv = sigma.clone().try_inverse().expect("invertible");
    let inv_err = (state.sigma_inv() - &direct_inv).amax();
    let direct_logdet = sigma.lu().determinant().ln();
    let logdet_err = (state.log_det() - direct_logdet).abs();
    let elapsed = start.elapsed();
    let pass = inv_err <= LINALG_TOL && logdet_err <= LINALG_TOL && elapsed < Duration::from_secs(5);
    report.add(
        2,
        pass,
        format!(
            "d=16, 1e4 updates: inverse max-abs {inv_err:.2e}, log_det {logdet_err:.2e} in {} \
             (tol {LINALG_TOL:e}, limit 5s)",
            secs(elapsed)
        ),
    );
}

// ---------------------------------------------------------- criteria 3, 4, 10

fn faithfulness_spec() -> InstanceSpec {
    InstanceSpec::Gap {
        states: 5,
        actions: 3,
        horizon: 4,
        delta_min: 0.2,
        seed: 3,
    }
}

struct FaithRuns {
    runs: Vec<SeedRun>,
    /// Audit taken once more after the last episode, independent of switches.
    final_audits: Vec<RegressionAudit>,
    elapsed: Duration,
}

fn faithfulness_runs() -> lsvi_core::Result<FaithRuns> {
    let mut cfg = ExperimentConfig::new(faithfulness_spec(), AgentKind::Ucbpp, 5_000, (0..10).collect());
    cfg.audit_regression = true;
    cfg.track_optimism = true;
    let mdp = cfg.instance.build()?;
    let oracle = optimal_values(&mdp)?;
    let start = Instant::now();
    let mut runs = Vec::new();
    let mut final_audits = Vec::new();
    for &seed in &cfg.seeds {
        let mut session = RunSession::new(&cfg, &mdp, &oracle, seed)?;
        session.run_to(&mdp, &oracle, cfg.episodes)?;
        if let AnyLearner::Ucbpp(agent) = session.learner() {
            let mut agent = agent.clone();
            agent.audit_against_scratch(&mdp);
            final_audits.push(agent.regression_audit());
        }
        runs.push(session.finish(&mdp)?);
    }
    Ok(FaithRuns {
        runs,
        final_audits,
        elapsed: start.elapsed(),
    })
}

/// Switch-time audit totals: (checks, switches, worst relative error, all switches audited).
fn switch_audits(runs: &[SeedRun], horizon: usize) -> (usize, usize, f64, bool) {
    let mut checks = 0;
    let mut switches = 0;
    let mut worst: f64 = 0.0;
    let mut complete = true;
    for r in runs {
        let audit = r.regression.expect("regression audit requested");
        checks += audit.checks;
        switches += r.metrics.switch_count();
        worst = worst.max(audit.max_rel_err_targets).max(audit.max_rel_err_weights);
        // One check per step at every switch.
        complete &= audit.checks == horizon * r.metrics.switch_count();
    }
    (checks, switches, worst, complete)
}

fn criterion_3(report: &mut Report, faith: &FaithRuns, trend: &[SeedRun]) {
    let (checks, switches, worst, complete) = switch_audits(&faith.runs, 4);
    let final_worst = faith
        .final_audits
        .iter()
        .map(|a| a.max_rel_err_targets.max(a.max_rel_err_weights))
        .fold(0.0, f64::max);
    let (t_checks, t_switches, t_worst, t_complete) = switch_audits(trend, 2);
    let per_run = faith.elapsed / faith.runs.len().max(1) as u32;
    // The criterion is about switches; a run without any switch never exercises it.
    let pass = switches > 0
        && complete
        && worst <= REGRESSION_TOL
        && final_worst <= REGRESSION_TOL
        && per_run < Duration::from_secs(120);
    report.add(
        3,
        pass,
        format!(
            "S=5 A=3 H=4 d=15 K=5000 x{} seeds: {switches} switches, {checks} switch audits, worst rel err \
             {worst:.2e}; end-of-run audit worst {final_worst:.2e} (tol {REGRESSION_TOL:e}), {} per run; \
             supplementary d=4 trend runs: {t_switches} switches, {t_checks} audits (complete={t_complete}), \
             worst {t_worst:.2e}",
            faith.runs.len(),
            secs(per_run)
        ),
    );
}

fn criterion_4(report: &mut Report, faith: &FaithRuns) {
    let (runs, elapsed) = (&faith.runs, faith.elapsed);
    let (mut checked, mut violations) = (0u64, 0u64);
    for r in runs {
        let stats = r.metrics.optimism.expect("optimism tracking requested");
        checked += stats.checked;
        violations += stats.violations;
    }
    let fraction = violations as f64 / checked.max(1) as f64;
    let pass = checked > 0 && fraction <= OPTIMISM_MAX_FRACTION && elapsed < Duration::from_secs(20 * 60);
    report.add(
        4,
        pass,
        format!(
            "default radii, {} seeds x 5000: {violations}/{checked} violations = {fraction:.2e} \
             (max {OPTIMISM_MAX_FRACTION}) in {}",
            runs.len(),
            secs(elapsed)
        ),
    );
}

fn criterion_10(report: &mut Report, runs: &[SeedRun]) {
    let mut buckets = 0;
    let mut populated = 0;
    let mut failures = 0;
    let mut max_slack: f64 = 0.0;
    let mut not_dominated = 0;
    for r in runs {
        for a in &r.audits {
            buckets += 1;
            populated += usize::from(a.episodes > 0);
            failures += usize::from(!a.holds());
            not_dominated += usize::from(!a.surrogate_dominated);
            max_slack = max_slack.max(a.slack);
        }
    }
    report.add(
        10,
        buckets > 0 && populated > 0 && failures == 0,
        format!(
            "{buckets} (h,n) buckets ({populated} non-empty): {failures} with left > right, \
             max left/right {max_slack:.3e}, {not_dominated} with surrogate not dominating"
        ),
    );
}

// -------------------------------------------------------------- criteria 5, 6

fn trend_spec(delta_min: f64) -> InstanceSpec {
    InstanceSpec::Gap {
        states: 2,
        actions: 2,
        horizon: 2,
        delta_min,
        seed: 1,
    }
}

fn trend_config(delta_min: f64, agent: AgentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(trend_spec(delta_min), agent, 20_000, (0..10).collect());
    if agent == AgentKind::Ucbpp {
        cfg.audit_regression = true;
        cfg.c_beta = TREND_C;
        cfg.c_bar_beta = TREND_C;
        cfg.c_tilde_beta = TREND_C;
    }
    cfg
}

fn median_regret_at(runs: &[SeedRun], k: usize) -> f64 {
    median(runs.iter().map(|r| r.metrics.regret_at(k)).collect())
}

fn criterion_5(report: &mut Report, ucb: &[SeedRun], base: &[SeedRun], oracle_gap: f64, elapsed: Duration) {
    let (u10, u20) = (median_regret_at(ucb, 10_000), median_regret_at(ucb, 20_000));
    let (b10, b20) = (median_regret_at(base, 10_000), median_regret_at(base, 20_000));
    let (du, db) = (u20 - u10, b20 - b10);
    let pass = du <= FLATTEN_FACTOR * u10 && db > du && elapsed < Duration::from_secs(3600);
    report.add(
        5,
        pass,
        format!(
            "oracle delta_min {oracle_gap:.3}: ucbpp median regret {u10:.2} -> {u20:.2} (increment {du:.2} \
             <= {FLATTEN_FACTOR}x{u10:.2}), baseline {b10:.2} -> {b20:.2} (increment {db:.2}) in {}",
            secs(elapsed)
        ),
    );
}

fn criterion_6(report: &mut Report, finals: &[(f64, f64, f64)], elapsed: Duration) {
    let nonincreasing = finals.windows(2).all(|w| w[1].2 <= w[0].2);
    let ratio = finals[0].2 / finals[finals.len() - 1].2;
    let pass = nonincreasing && ratio >= GAP_RATIO && elapsed < Duration::from_secs(7200);
    let listed: Vec<String> = finals
        .iter()
        .map(|(target, oracle, r)| format!("{target}(oracle {oracle:.3}): {r:.2}"))
        .collect();
    report.add(
        6,
        pass,
        format!(
            "median final regret by delta_min [{}], ratio {ratio:.2} (min {GAP_RATIO}) in {}",
            listed.join(", "),
            secs(elapsed)
        ),
    );
}

// ---------------------------------------------------------------- criterion 7

struct SwitchCase {
    label: String,
    dim: usize,
    horizon: usize,
    run: SeedRun,
}

fn criterion_7(report: &mut Report, cases: &[SwitchCase]) {
    let mut failures = Vec::new();
    let mut max_used: f64 = 0.0;
    for c in cases {
        let m = &c.run.metrics;
        let k = m.episodes();
        let n = m.switch_count();
        let bound = 3.0 * (c.dim * c.horizon) as f64 * (1.0 + (k * c.horizon * c.horizon) as f64).log2();
        let half = m.switches_by(k / 2);
        max_used = max_used.max(n as f64 / bound);
        if n as f64 > bound || n - half > half {
            failures.push(format!("{} seed {}: N={n} N(K/2)={half} bound {bound:.0}", c.label, c.run.seed));
        }
    }
    report.add(
        7,
        !cases.is_empty() && failures.is_empty(),
        format!(
            "{} runs: max N_switch/bound {max_used:.3}, failures {:?}",
            cases.len(),
            failures
        ),
    );
}

// -------------------------------------------------------------- criteria 8, 9

/// `Σ_t ⌈e_t/M⌉` recomputed from the raw round log.
fn segment_rounds(log: &[RoundLog], agents: usize) -> usize {
    let mut total = 0;
    let mut open = 0usize;
    for r in log {
        open += r.episodes_fed;
        if r.switch_fired {
            total += open.div_ceil(agents);
            open = 0;
        }
    }
    total + open.div_ceil(agents)
}

fn criterion_8(report: &mut Report, logs: &[(usize, SeedRun)]) {
    let mut failures = Vec::new();
    for (agents, run) in logs {
        let log = &run.metrics.rounds;
        let switches = log.iter().filter(|r| r.switch_fired).count();
        let fed: usize = log.iter().map(|r| r.episodes_fed).sum();
        let identity = log.len() == segment_rounds(log, *agents);
        let bound = log.len() <= switches + fed.div_ceil(*agents) + 1;
        let acc = RoundAccounting::from_log(log, *agents);
        let consistent = acc.identity_holds() == identity
            && acc.bound_holds() == bound
            && fed == run.metrics.episodes()
            && log.iter().all(|r| r.episodes_fed + r.episodes_discarded == *agents && r.episodes_fed >= 1);
        if !(identity && bound && consistent) {
            failures.push(format!("M={agents} seed {}", run.seed));
        }
    }
    report.add(
        8,
        !logs.is_empty() && failures.is_empty(),
        format!("{} concurrent logs: failures {:?}", logs.len(), failures),
    );
}

fn speedup_spec() -> InstanceSpec {
    InstanceSpec::Gap {
        states: 2,
        actions: 2,
        horizon: 3,
        delta_min: 0.4,
        seed: 1,
    }
}

fn speedup_config(agents: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(speedup_spec(), AgentKind::Concurrent, 20_000, (0..10).collect());
    cfg.c_beta = SPEEDUP_C;
    cfg.c_bar_beta = SPEEDUP_C;
    cfg.c_tilde_beta = SPEEDUP_C;
    cfg.agents = agents;
    cfg.epsilon = Some(0.5);
    cfg.max_rounds = Some(200_000);
    cfg
}

fn criterion_9(report: &mut Report, logs: &mut Vec<(usize, SeedRun)>) -> lsvi_core::Result<()> {
    let start = Instant::now();
    let mdp = speedup_spec().build()?;
    let oracle = optimal_values(&mdp)?;
    let mut medians = Vec::new();
    for agents in [1usize, 2, 4, 8] {
        let cfg = speedup_config(agents);
        let mut rounds = Vec::new();
        for &seed in &cfg.seeds {
            match run_seed(&cfg, &mdp, &oracle, seed) {
                Ok(run) => {
                    rounds.push(run.concurrent.expect("concurrent outcome").rounds as f64);
                    logs.push((agents, run));
                }
                Err(Error::BudgetExhausted { .. }) => rounds.push(f64::INFINITY),
                Err(e) => return Err(e),
            }
        }
        medians.push((agents, median(rounds)));
    }
    let elapsed = start.elapsed();
    let nonincreasing = medians.windows(2).all(|w| w[1].1 <= w[0].1);
    let (r1, r8) = (medians[0].1, medians[3].1);
    let pass = nonincreasing && r8 <= SPEEDUP_FACTOR * r1 && elapsed < Duration::from_secs(3600);
    report.add(
        9,
        pass,
        format!(
            "eps=0.5 V*={:.3}: median rounds {:?}, rounds(8)/rounds(1) = {:.3} (max {SPEEDUP_FACTOR}) in {}",
            oracle.v_star(0, mdp.initial_state()),
            medians,
            r8 / r1,
            secs(elapsed)
        ),
    );
    Ok(())
}

fn fixed_budget_concurrent(logs: &mut Vec<(usize, SeedRun)>) -> lsvi_core::Result<()> {
    let mdp = faithfulness_spec().build()?;
    let oracle = optimal_values(&mdp)?;
    for agents in [1usize, 3, 5, 8] {
        let mut cfg = ExperimentConfig::new(faithfulness_spec(), AgentKind::Concurrent, 3_000, vec![0, 1]);
        cfg.agents = agents;
        for &seed in &cfg.seeds {
            logs.push((agents, run_seed(&cfg, &mdp, &oracle, seed)?));
        }
    }
    Ok(())
}

// --------------------------------------------------------------- criterion 11

fn read_dir_sorted(dir: &std::path::Path) -> std::io::Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        files.push((entry.file_name().to_string_lossy().into_owned(), std::fs::read(entry.path())?));
    }
    files.sort();
    Ok(files)
}

fn criterion_11(report: &mut Report) -> lsvi_core::Result<()> {
    let mut notes = Vec::new();

    // Identical seeds, identical bytes, for each agent kind.
    let mut identical = true;
    for agent in [AgentKind::Ucbpp, AgentKind::Baseline, AgentKind::Concurrent] {
        let dirs = [tempfile::tempdir()?, tempfile::tempdir()?];
        for dir in &dirs {
            let mut cfg = ExperimentConfig::new(faithfulness_spec(), agent, 1_500, vec![5, 6]);
            cfg.agents = 3;
            cfg.c_beta = 0.05;
            cfg.output = Some(dir.path().to_path_buf());
            run_experiment(&cfg)?;
        }
        let (a, b) = (read_dir_sorted(dirs[0].path())?, read_dir_sorted(dirs[1].path())?);
        let mut same = !a.is_empty() && a.len() == b.len();
        for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
            same &= name_a == name_b;
            if name_a.ends_with(".csv") {
                same &= bytes_a == bytes_b;
            } else {
                // Summaries embed the config, whose output directory differs.
                let parse = |bytes: &[u8]| -> lsvi_core::Result<RunSummary> {
                    let mut s = RunSummary::from_json(std::str::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?)?;
                    if let Some(c) = s.config.as_mut() {
                        c.output = None;
                    }
                    Ok(s)
                };
                same &= parse(bytes_a)? == parse(bytes_b)?;
            }
        }
        identical &= same;
        notes.push(format!("{agent:?} files identical={same} ({})", a.len()));
    }

    // Resume from a checkpoint halfway through.
    let mdp = trend_spec(0.2).build()?;
    let oracle = optimal_values(&mdp)?;
    let mut resumed_ok = true;
    for agent in [AgentKind::Ucbpp, AgentKind::Baseline] {
        let mut cfg = trend_config(0.2, agent);
        cfg.episodes = 3_000;
        let whole = run_seed(&cfg, &mdp, &oracle, 9)?;
        let mut session = RunSession::new(&cfg, &mdp, &oracle, 9)?;
        session.run_to(&mdp, &oracle, 1_234)?;
        let text = session.to_checkpoint()?;
        drop(session);
        let mut session = RunSession::from_checkpoint(&text)?;
        session.run_to(&mdp, &oracle, cfg.episodes)?;
        let resumed = session.finish(&mdp)?;
        let same = resumed == whole
            && metrics_csv(&resumed.metrics) == metrics_csv(&whole.metrics)
            && trace_csv(&resumed.trace) == trace_csv(&whole.trace);
        resumed_ok &= same;
        notes.push(format!("{agent:?} resume equal={same}"));
    }

    // Export and parse back.
    let mut roundtrip = true;
    let cfg = trend_config(0.2, AgentKind::Ucbpp);
    let mut short = cfg.clone();
    short.episodes = 2_000;
    let run = run_seed(&short, &mdp, &oracle, 4)?;
    let csv = metrics_csv(&run.metrics);
    let summary = RunSummary::new(&run, Some(&short));
    let json = summary.to_json()?;
    roundtrip &= parse_metrics(&csv, &json)? == run.metrics;
    roundtrip &= RunSummary::from_json(&json)? == summary;
    roundtrip &= LinearMdp::from_json_str(&mdp.to_json_string()?)? == mdp;
    notes.push(format!("export/parse exact={roundtrip}"));

    report.add(11, identical && resumed_ok && roundtrip, notes.join("; "));
    Ok(())
}

// ---------------------------------------------------------------------- main

fn run_all(report: &mut Report) -> lsvi_core::Result<()> {
    criterion_1(report);
    criterion_2(report);

    let faith = faithfulness_runs()?;
    let faith_mdp = faithfulness_spec().build()?;
    criterion_4(report, &faith);

    let trend_start = Instant::now();
    let trend_mdp = trend_spec(0.2).build()?;
    let trend_oracle = optimal_values(&trend_mdp)?;
    let ucb = run_experiment(&trend_config(0.2, AgentKind::Ucbpp))?;
    let base = run_experiment(&trend_config(0.2, AgentKind::Baseline))?;
    criterion_3(report, &faith, &ucb);
    criterion_5(report, &ucb, &base, trend_oracle.delta_min(), trend_start.elapsed());

    let gap_start = Instant::now();
    let mut finals = Vec::new();
    let mut gap_runs = Vec::new();
    for target in [0.1, 0.2, 0.4] {
        let runs = if target == 0.2 {
            ucb.clone()
        } else {
            run_experiment(&trend_config(target, AgentKind::Ucbpp))?
        };
        let oracle_gap = optimal_values(&trend_spec(target).build()?)?.delta_min();
        finals.push((target, oracle_gap, median_regret_at(&runs, 20_000)));
        gap_runs.push((target, runs));
    }
    criterion_6(report, &finals, gap_start.elapsed() + trend_start.elapsed());

    let mut cases = Vec::new();
    for run in &faith.runs {
        cases.push(SwitchCase {
            label: "faithfulness".into(),
            dim: faith_mdp.dim(),
            horizon: faith_mdp.horizon(),
            run: run.clone(),
        });
    }
    for (target, runs) in gap_runs {
        for run in runs {
            cases.push(SwitchCase {
                label: format!("trend delta {target}"),
                dim: trend_mdp.dim(),
                horizon: trend_mdp.horizon(),
                run,
            });
        }
    }
    criterion_7(report, &cases);

    let mut logs = Vec::new();
    fixed_budget_concurrent(&mut logs)?;
    criterion_9(report, &mut logs)?;
    criterion_8(report, &logs);

    criterion_10(report, &faith.runs);
    criterion_11(report)?;
    Ok(())
}

fn main() -> ExitCode {
    let mut report = Report { lines: Vec::new() };
    if let Err(e) = run_all(&mut report) {
        println!("acceptance aborted: {e}");
        return ExitCode::FAILURE;
    }
    report.lines.sort_by_key(|l| l.0);
    let failed: Vec<usize> = report.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        report.lines.len() - failed.len(),
        report.lines.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(", failed {failed:?}")
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
