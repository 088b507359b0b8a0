//! End-to-end acceptance checks on both benchmark systems.
//!
//! Every training-dependent check runs the full pipeline with seed 0 and
//! retries with seeds 1 and 2 if any check for that system fails; the first
//! fully passing seed is reported. One line per criterion is printed.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hysteresis_rl::config::{NoiseMode, RunConfig};
use hysteresis_rl::envs::{angle_diff, Env, EnvKind, State};
use hysteresis_rl::harness::{
    artifacts, compare, comparison_ics, overlap_ics, run_pipeline, sided_consistency, ExperimentReport, NoiseModel,
    Outcome, PipelineOutput, StuckCriterion,
};
use hysteresis_rl::hybrid::DEFAULT_ZENO_LIMIT;
use hysteresis_rl::nn::Mlp;
use hysteresis_rl::region::Region;
use hysteresis_rl::rl::{Normalizer, QPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
const NOISE: f64 = 0.1;
const RUNTIME_BUDGET: Duration = Duration::from_secs(30 * 60);

const CIRCLE_SWITCH: f64 = PI;
const CIRCLE_E0_END: f64 = 1.13 * PI;
const CIRCLE_E1_START: f64 = 0.87 * PI;
const CIRCLE_SET_TOLERANCE: f64 = 0.03 * PI;
const CIRCLE_MIN_OVERLAP: f64 = 0.2 * PI;

const OBSTACLE_CRITICAL_CENTRE: State = State { x: 0.4, y: 0.0 };
const OBSTACLE_CRITICAL_RADIUS: f64 = 0.2;
const OBSTACLE_MIN_OVERLAP: f64 = 0.11;

const INTEGRATOR_TOLERANCE: f64 = 1e-3;
const GRADIENT_TOLERANCE: f64 = 1e-4;
const ARGMAX_CASES: usize = 1000;

struct Check {
    criterion: u8,
    pass: bool,
    detail: String,
}

impl Check {
    fn new(criterion: u8, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            criterion,
            pass,
            detail: detail.into(),
        }
    }

    fn line(&self) -> String {
        format!(
            "criterion {} {}: {}",
            self.criterion,
            if self.pass { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

fn out_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn config(kind: EnvKind, seed: u64, dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::for_env(kind);
    cfg.seed = seed;
    cfg.out_dir = dir.to_path_buf();
    cfg.harness.noise = NOISE;
    cfg.harness.noise_mode = NoiseMode::Adversarial;
    cfg
}

struct Attempt {
    output: PipelineOutput,
    runtime: Duration,
    report: ExperimentReport,
    checks: Vec<Check>,
}

fn run_attempt(kind: EnvKind, seed: u64, dir: &Path) -> Result<Attempt, String> {
    let _ = std::fs::remove_dir_all(dir);
    let cfg = config(kind, seed, dir);
    let start = Instant::now();
    let output = run_pipeline(&cfg, 1, |s| println!("  [{} seed {seed}] step {} {}: {}", kind.name(), s.step, s.name, s.detail))
        .map_err(|e| e.to_string())?;
    let runtime = start.elapsed();
    let report = comparison(&output, &dir.join("compare"))?;
    let mut checks = match kind {
        EnvKind::UnitCircle => circle_checks(&output, runtime, &report),
        EnvKind::Obstacle => obstacle_checks(&output, runtime, &report),
    };
    checks.push(sided_check(&output)?);
    checks.push(invariant_check(&output, &report));
    Ok(Attempt {
        output,
        runtime,
        report,
        checks,
    })
}

fn comparison(out: &PipelineOutput, dir: &Path) -> Result<ExperimentReport, String> {
    let cfg = &out.config;
    let noise = NoiseModel {
        magnitude: cfg.harness.noise,
        mode: cfg.harness.noise_mode,
        seed: cfg.seed,
    };
    let stuck = StuckCriterion {
        window: cfg.harness.stuck_window,
        threshold: cfg.harness.stuck_threshold,
    };
    compare(
        &out.baseline,
        &out.system,
        &comparison_ics(cfg.env),
        &noise,
        cfg.harness.duration_for(cfg.env),
        &stuck,
        cfg.hybrid.zeno_limit,
        Some(dir),
    )
    .map_err(|e| e.to_string())
}

/// `(start, end)` of a single angular interval, with `start` unwrapped below zero
/// when the interval crosses angle zero.
fn single_interval(region: &Region) -> Option<(f64, f64)> {
    match region.angular_intervals().as_slice() {
        [(a, b)] if a > b => Some((a - 2.0 * PI, *b)),
        [(a, b)] => Some((*a, *b)),
        _ => None,
    }
}

fn circle_checks(out: &PipelineOutput, runtime: Duration, report: &ExperimentReport) -> Vec<Check> {
    let critical = &out.critical.critical;
    let has_switch = critical.contains(&State::on_circle(CIRCLE_SWITCH));
    let [e0, e1] = &out.extended;
    let (i0, i1) = (single_interval(e0), single_interval(e1));
    let close = |a: f64, b: f64| angle_diff(a, b).abs() <= CIRCLE_SET_TOLERANCE;
    let e0_ok = matches!(i0, Some((a, b)) if close(a, 0.0) && close(b, CIRCLE_E0_END));
    let e1_ok = matches!(i1, Some((a, b)) if close(a, CIRCLE_E1_START) && close(b, 2.0 * PI));
    let width_ok = out.overlap_width > CIRCLE_MIN_OVERLAP;
    let c1 = Check::new(
        1,
        has_switch && e0_ok && e1_ok && width_ok && runtime <= RUNTIME_BUDGET,
        format!(
            "M* {} (contains π: {has_switch}); M0ext {}; M1ext {}; overlap {:.3}π > 0.2π; pipeline {:.0} s",
            critical.summary(),
            e0.summary(),
            e1.summary(),
            out.overlap_width / PI,
            runtime.as_secs_f64()
        ),
    );

    let at_pi = report
        .rows
        .iter()
        .find(|r| angle_diff(r.ic.angle(), PI).abs() < 1e-9)
        .map(|r| r.baseline.outcome);
    let hybrid_all = report
        .rows
        .iter()
        .all(|r| r.hybrid.iter().all(|h| h.outcome == Outcome::Reached));
    let c2 = Check::new(
        2,
        at_pi == Some(Outcome::Stuck) && hybrid_all,
        format!(
            "baseline from π: {}; hybrid reached from all {} initial angles for both modes: {hybrid_all}",
            at_pi.map_or("missing", |o| o.label()),
            report.rows.len()
        ),
    );
    vec![c1, c2]
}

fn obstacle_checks(out: &PipelineOutput, runtime: Duration, report: &ExperimentReport) -> Vec<Check> {
    let critical = &out.critical.critical;
    let grid = critical.grid();
    let half_diagonal = 0.5 * (grid.x_step().powi(2) + grid.transversal_step().powi(2)).sqrt();
    let near = critical
        .cells()
        .any(|c| grid.center(c).distance(&OBSTACLE_CRITICAL_CENTRE) <= OBSTACLE_CRITICAL_RADIUS + half_diagonal);
    let width_ok = out.overlap_width >= OBSTACLE_MIN_OVERLAP - 1e-9;
    let c3 = Check::new(
        3,
        near && width_ok && runtime <= RUNTIME_BUDGET,
        format!(
            "M* {} (meets the 0.2-ball around [0.4, 0]: {near}); overlap {:.3} >= 0.11; pipeline {:.0} s",
            critical.summary(),
            out.overlap_width,
            runtime.as_secs_f64()
        ),
    );

    let at_origin = report
        .rows
        .iter()
        .find(|r| r.ic.distance(&State::new(0.0, 0.0)) < 1e-12)
        .map(|r| r.baseline.outcome);
    let hybrid_all = report
        .rows
        .iter()
        .all(|r| r.hybrid.iter().all(|h| h.outcome == Outcome::Reached));
    let c4 = Check::new(
        4,
        at_origin == Some(Outcome::Crashed) && hybrid_all,
        format!(
            "baseline from [0, 0]: {}; hybrid reached without collision from all {} initial states for both modes: {hybrid_all}",
            at_origin.map_or("missing", |o| o.label()),
            report.rows.len()
        ),
    );
    vec![c3, c4]
}

/// Direction check from the overlap initial states, noise-free: whether an
/// initial state lies in the overlap is a property of the state itself.
fn sided_check(out: &PipelineOutput) -> Result<Check, String> {
    let cfg = &out.config;
    let cases: Vec<(State, u8)> = overlap_ics(cfg.env).into_iter().flat_map(|s| [(s, 0), (s, 1)]).collect();
    let checks = sided_consistency(
        &out.system,
        &out.baseline,
        &cases,
        &NoiseModel::none(),
        cfg.harness.duration_for(cfg.env),
        cfg.hybrid.zeno_limit,
    )
    .map_err(|e| e.to_string())?;
    let bad: Vec<String> = checks
        .iter()
        .filter(|c| !c.consistent)
        .map(|c| format!("({:.3}, {:.3}) q0={} went to {:?}", c.ic.x, c.ic.y, c.q0, c.side))
        .collect();
    Ok(Check::new(
        5,
        bad.is_empty(),
        format!(
            "{}: {} overlap runs travel to the side of q0{}",
            cfg.env.name(),
            checks.len() - bad.len(),
            if bad.is_empty() { String::new() } else { format!("; inconsistent: {}", bad.join(", ")) }
        ),
    ))
}

/// Region algebra of the trained run and trajectory invariants of every comparison run.
fn invariant_check(out: &PipelineOutput, report: &ExperimentReport) -> Check {
    let [m0, m1] = &out.partitions;
    let [e0, e1] = &out.extended;
    let mut problems = Vec::new();
    if !m0.union(m1).unwrap().is_full() {
        problems.push("M0 ∪ M1 ≠ S".to_string());
    }
    if m0.intersection(m1).unwrap() != out.critical.critical {
        problems.push("M0 ∩ M1 ≠ M*".to_string());
    }
    if !m0.is_subset_of(e0).unwrap() || !m1.is_subset_of(e1).unwrap() {
        problems.push("M_i ⊄ M_i^ext".to_string());
    }
    if !e0.union(e1).unwrap().is_full() {
        problems.push("extended sets do not cover S".to_string());
    }
    let floor = out.overlap_width - 2.0 * report.noise.magnitude;
    let mut runs = 0;
    for row in &report.rows {
        for (q0, h) in row.hybrid.iter().enumerate() {
            runs += 1;
            let tag = format!("ic ({:.3}, {:.3}) q0={q0}", row.ic.x, row.ic.y);
            problems.extend(h.invariant_violations.iter().map(|v| format!("{tag}: {v}")));
            if h.jumps >= DEFAULT_ZENO_LIMIT.min(out.config.hybrid.zeno_limit) {
                problems.push(format!("{tag}: {} jumps", h.jumps));
            }
            if let Some(d) = h.min_dwell {
                if d < floor - 1e-9 {
                    problems.push(format!("{tag}: dwell {d:.3} < {floor:.3}"));
                }
            }
        }
    }
    Check::new(
        6,
        problems.is_empty(),
        format!(
            "{}: region algebra cell-exact and {runs} hybrid runs keep continuity, flow-in-C, Zeno and dwell >= {floor:.3}{}",
            out.config.env.name(),
            if problems.is_empty() { String::new() } else { format!("; violations: {}", problems.join("; ")) }
        ),
    )
}

fn integrator_check() -> Check {
    let env = Env::unit_circle();
    let mut worst: f64 = 0.0;
    for i in 0..360 {
        for u in [-1.0, -0.5, 0.0, 0.3, 1.0] {
            let a = 2.0 * PI * i as f64 / 360.0;
            let next = env.step(State::on_circle(a), u).unwrap().next_state;
            worst = worst.max(angle_diff(a + u * env.dt(), next.angle()).abs());
        }
    }
    Check::new(
        6,
        worst <= INTEGRATOR_TOLERANCE,
        format!("integrator vs exact rotation: worst per-step angle error {worst:.2e} <= 1e-3"),
    )
}

fn gradient_check() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[2, 16, 16, 3], &mut rng);
        let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let up: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |n: &Mlp| -> f64 { n.forward(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum() };
        let grads = net.backward(&net.forward_traced(&x).unwrap(), &up).unwrap();
        for (i, g) in grads.iter().enumerate() {
            let (mut p, mut m) = (net.clone(), net.clone());
            p.params_mut()[i] += 1e-5;
            m.params_mut()[i] -= 1e-5;
            let numeric = (f(&p) - f(&m)) / 2e-5;
            worst = worst.max((g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6));
        }
    }
    Check::new(
        6,
        worst <= GRADIENT_TOLERANCE,
        format!("gradient check over 20 seeds: worst relative error {worst:.2e} <= 1e-4"),
    )
}

fn argmax_check() -> Check {
    let env = Env::obstacle();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..ARGMAX_CASES {
        let policy = QPolicy {
            q_net: Mlp::new(&[2, rng.gen_range(1..12), 5], &mut rng),
            action_table: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            normalizer: Normalizer::for_env(&env),
        };
        let obs = env.observe(State::new(rng.gen_range(0.0..3.0), rng.gen_range(-1.5..1.5)), 0.0);
        let q = policy.q_values(&obs);
        let best = (0..q.len()).find(|&i| (0..q.len()).all(|j| q[i] >= q[j])).unwrap();
        if policy.greedy_index(&obs) != best {
            mismatches += 1;
        }
    }
    Check::new(
        6,
        mismatches == 0,
        format!("greedy argmax equals exhaustive argmax on {ARGMAX_CASES} random cases ({mismatches} mismatches)"),
    )
}

fn files_identical(a: &Path, b: &Path) -> bool {
    match (std::fs::read(a), std::fs::read(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn determinism_check(first: &Attempt, seed: u64, dir: &Path) -> Check {
    let kind = first.output.config.env;
    let first_dir = first.output.config.out_dir.clone();
    let rerun = match run_attempt(kind, seed, dir) {
        Ok(a) => a,
        Err(e) => return Check::new(7, false, format!("{}: rerun failed: {e}", kind.name())),
    };
    let mut regions: Vec<&str> = vec![artifacts::CRITICAL];
    regions.extend(artifacts::SIDE);
    regions.extend(artifacts::PARTITION);
    regions.extend(artifacts::EXTENDED);
    let region_diff: Vec<&str> = regions
        .iter()
        .copied()
        .filter(|name| !files_identical(&first_dir.join(name), &dir.join(name)))
        .collect();
    let mut csvs = Vec::new();
    for (row_a, row_b) in first.report.rows.iter().zip(&rerun.report.rows) {
        csvs.push((row_a.baseline.trajectory.clone(), row_b.baseline.trajectory.clone()));
        for (a, b) in row_a.hybrid.iter().zip(&row_b.hybrid) {
            csvs.push((a.trajectory.clone(), b.trajectory.clone()));
        }
    }
    let csv_same = csvs
        .iter()
        .all(|(a, b)| matches!((a, b), (Some(a), Some(b)) if files_identical(a, b)));
    Check::new(
        7,
        region_diff.is_empty() && csv_same && !csvs.is_empty(),
        format!(
            "{}: rerun reproduces {} region files{} and {} trajectory CSVs byte for byte: {csv_same}",
            kind.name(),
            regions.len(),
            if region_diff.is_empty() { String::new() } else { format!(" (differing: {})", region_diff.join(", ")) },
            csvs.len()
        ),
    )
}

/// First seed whose run passes every check for `kind`, or the last attempt.
fn system_checks(kind: EnvKind) -> Vec<Check> {
    let root = out_root().join(kind.name());
    let mut last: Vec<Check> = Vec::new();
    for seed in SEEDS {
        let dir = root.join(format!("seed{seed}"));
        match run_attempt(kind, seed, &dir) {
            Ok(mut attempt) => {
                let all = attempt.checks.iter().all(|c| c.pass);
                for c in &attempt.checks {
                    println!("  [{} seed {seed}] {}", kind.name(), c.line());
                }
                if all {
                    let det = determinism_check(&attempt, seed, &root.join(format!("seed{seed}_rerun")));
                    attempt.checks.push(det);
                    for c in &mut attempt.checks {
                        c.detail = format!("{} (seed {seed}, {:.0} s)", c.detail, attempt.runtime.as_secs_f64());
                    }
                    return attempt.checks;
                }
                last = attempt.checks;
            }
            Err(e) => {
                println!("  [{} seed {seed}] pipeline failed: {e}", kind.name());
                let criteria: &[u8] = match kind {
                    EnvKind::UnitCircle => &[1, 2, 5, 7],
                    EnvKind::Obstacle => &[3, 4, 5, 7],
                };
                last = criteria
                    .iter()
                    .map(|&c| Check::new(c, false, format!("{}: pipeline failed with seed {seed}: {e}", kind.name())))
                    .collect();
            }
        }
    }
    last
}

#[test]
fn acceptance_criteria() {
    let mut checks = vec![integrator_check(), gradient_check(), argmax_check()];
    checks.extend(system_checks(EnvKind::UnitCircle));
    checks.extend(system_checks(EnvKind::Obstacle));
    checks.sort_by_key(|c| c.criterion);
    println!();
    for c in &checks {
        println!("{}", c.line());
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(Check::line).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
