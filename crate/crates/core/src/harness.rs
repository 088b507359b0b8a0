//! End-to-end pipeline and the baseline-versus-hybrid experiments.
//!
//! [`run_pipeline`] trains the baseline, locates its critical set, builds
//! the partitions and their extensions, retrains one policy per extended
//! region and assembles the hybrid system, persisting every intermediate
//! artifact. [`compare`] then runs baseline and hybrid from the same initial
//! conditions under the same recorded measurement noise.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{NoiseMode, RunConfig};
use crate::critical::{find_critical_set, partition, restrict_policy, CriticalSet, Separation, Witness};
use crate::envs::{rollout, Env, EnvKind, Rollout, State, TerminationCause};
use crate::error::{ConfigError, HybridError, PipelineError};
use crate::extend::{check_overlap, extend_region};
use crate::hybrid::{assemble, csv_row, solve, HybridState, HybridSystem, HybridTrajectory, TrajectoryEnd, CSV_HEADER};
use crate::region::Region;
use crate::rl::{
    success_rate, train_dqn, train_ppo, write_metrics_csv, MetricsRow, Policy, RestrictedEnv, TrainConfig,
};

/// Measurement noise bounded by `magnitude`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub magnitude: f64,
    pub mode: NoiseMode,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            magnitude: 0.0,
            mode: NoiseMode::Uniform,
            seed: 0,
        }
    }

    /// Runs `baseline` from `s0` under this noise for `steps` steps and
    /// returns the rollout with the noise sequence it consumed, padded to
    /// `steps` samples so it can be replayed to another closed loop.
    ///
    /// Adversarial samples take the sign whose observation moves the
    /// baseline's action furthest from its noise-free action; on ties the
    /// sign alternates.
    pub fn record(&self, env: &Env, baseline: &Policy, s0: State, steps: usize, stream: u64) -> (Rollout, Vec<f64>) {
        let eps = self.magnitude;
        let alternating = |k: usize| if k % 2 == 0 { eps } else { -eps };
        let mut seq: Vec<f64> = match self.mode {
            NoiseMode::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(stream);
                (0..steps)
                    .map(|_| if eps > 0.0 { rng.gen_range(-eps..=eps) } else { 0.0 })
                    .collect()
            }
            NoiseMode::Adversarial => Vec::with_capacity(steps),
        };
        let run = match self.mode {
            NoiseMode::Uniform => {
                let fixed = seq.clone();
                rollout(env, s0, steps, |o| baseline.act(o), |k, _| fixed[k])
            }
            NoiseMode::Adversarial => rollout(
                env,
                s0,
                steps,
                |o| baseline.act(o),
                |k, s| {
                    let clean = baseline.act(&env.observe(*s, 0.0));
                    let shift = |n: f64| (baseline.act(&env.observe(*s, n)) - clean).abs();
                    let (up, down) = (shift(eps), shift(-eps));
                    let n = if (up - down).abs() <= 1e-12 {
                        alternating(k)
                    } else if up > down {
                        eps
                    } else {
                        -eps
                    };
                    seq.push(n);
                    n
                },
            ),
        };
        while seq.len() < steps {
            seq.push(alternating(seq.len()));
        }
        (run, seq)
    }
}

/// A run is stuck when its distance to the setpoint varies by less than
/// `threshold` over the final `window` seconds, so chatter in place counts as
/// stuck while slow progress does not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StuckCriterion {
    pub window: f64,
    pub threshold: f64,
}

impl Default for StuckCriterion {
    fn default() -> Self {
        Self {
            window: 2.0,
            threshold: 0.05,
        }
    }
}

impl StuckCriterion {
    pub fn is_stuck(&self, states: &[State], dt: f64, setpoint: &State) -> bool {
        let n = (self.window / dt).round() as usize;
        if states.len() <= n {
            return false;
        }
        let (lo, hi) = states[states.len() - 1 - n..]
            .iter()
            .map(|s| s.distance(setpoint))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        hi - lo < self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Reached,
    Stuck,
    Crashed,
    LeftDomain,
    /// Ran out of time while still moving.
    NotReached,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Reached => "reached",
            Outcome::Stuck => "stuck",
            Outcome::Crashed => "crashed",
            Outcome::LeftDomain => "left-domain",
            Outcome::NotReached => "not-reached",
        }
    }
}

pub fn classify(env: &Env, states: &[State], end: TrajectoryEnd, stuck: &StuckCriterion) -> Outcome {
    match end {
        TrajectoryEnd::ReachedSetpoint => Outcome::Reached,
        TrajectoryEnd::Crashed => Outcome::Crashed,
        TrajectoryEnd::LeftDomain => Outcome::LeftDomain,
        TrajectoryEnd::Duration => {
            let last = states.last().expect("trajectories hold their initial state");
            if env.reached(last) {
                Outcome::Reached
            } else if stuck.is_stuck(states, env.dt(), &env.setpoint()) {
                Outcome::Stuck
            } else {
                Outcome::NotReached
            }
        }
    }
}

fn to_cause(end: TrajectoryEnd) -> Option<TerminationCause> {
    match end {
        TrajectoryEnd::ReachedSetpoint => Some(TerminationCause::ReachedSetpoint),
        TrajectoryEnd::Crashed => Some(TerminationCause::Crashed),
        TrajectoryEnd::LeftDomain => Some(TerminationCause::LeftDomain),
        TrajectoryEnd::Duration => None,
    }
}

/// Summary of one simulated closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub outcome: Outcome,
    pub final_state: State,
    pub final_distance: f64,
    pub jumps: usize,
    /// Smallest transversal travel between consecutive jumps.
    pub min_dwell: Option<f64>,
    /// Side of the separation rule the run ended up on.
    pub side: Option<u8>,
    pub invariant_violations: Vec<String>,
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcReport {
    pub ic: State,
    /// The noise sequence consumed, identically, by every run of this row.
    pub noise: Vec<f64>,
    pub baseline: RunRecord,
    /// Hybrid runs started with `q0 = 0` and `q0 = 1`.
    pub hybrid: [RunRecord; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub env: EnvKind,
    pub noise: NoiseModel,
    pub duration: f64,
    pub stuck: StuckCriterion,
    pub config: Option<RunConfig>,
    pub rows: Vec<IcReport>,
}

impl ExperimentReport {
    /// Side-by-side outcome table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<24} {:<12} {:<18} {:<18}\n",
            "initial state", "baseline", "hybrid q0=0", "hybrid q0=1"
        );
        for row in &self.rows {
            let ic = describe_state(self.env, &row.ic);
            let h = |r: &RunRecord| format!("{} ({} jumps)", r.outcome.label(), r.jumps);
            out.push_str(&format!(
                "{:<24} {:<12} {:<18} {:<18}\n",
                ic,
                row.baseline.outcome.label(),
                h(&row.hybrid[0]),
                h(&row.hybrid[1])
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

pub fn describe_state(kind: EnvKind, s: &State) -> String {
    match kind {
        EnvKind::UnitCircle => format!("angle {:.3}π", s.angle() / PI),
        EnvKind::Obstacle => format!("[{:.3}, {:.3}]", s.x, s.y),
    }
}

/// Baseline rollout in the hybrid trajectory CSV layout (mode column empty).
pub fn baseline_csv(env: &Env, run: &Rollout) -> String {
    let dt = env.dt();
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (k, s) in run.states.iter().enumerate() {
        let reward = if k == 0 { 0.0 } else { run.rewards[k - 1] };
        let event = if k == 0 { "start" } else { "flow" };
        out.push_str(&csv_row(k as f64 * dt, 0, *s, None, run.actions.get(k).copied(), reward, event));
    }
    let end = TrajectoryEnd::from(run.cause);
    out.push_str(&csv_row(
        (run.states.len() - 1) as f64 * dt,
        0,
        run.final_state(),
        None,
        None,
        0.0,
        &format!("end:{end}"),
    ));
    out
}

fn hybrid_record(
    sys: &HybridSystem,
    traj: &HybridTrajectory,
    stuck: &StuckCriterion,
    path: Option<PathBuf>,
) -> RunRecord {
    let env = sys.env();
    let states = traj.states();
    let last = traj.final_state().xi;
    RunRecord {
        outcome: classify(env, &states, traj.end, stuck),
        final_state: last,
        final_distance: last.distance(&env.setpoint()),
        jumps: traj.jump_count(),
        min_dwell: traj.min_dwell(env),
        side: Separation::for_env(env.kind()).side(env, &states, to_cause(traj.end)),
        invariant_violations: traj.invariant_violations(sys),
        trajectory: path,
    }
}

/// Simulates baseline and hybrid (both initial modes) from every initial
/// condition under the same recorded noise. Trajectories are exported to
/// `out_dir` when given.
#[allow(clippy::too_many_arguments)]
pub fn compare(
    baseline: &Policy,
    sys: &HybridSystem,
    ics: &[State],
    noise: &NoiseModel,
    duration: f64,
    stuck: &StuckCriterion,
    zeno_limit: usize,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport, HybridError> {
    let env = sys.env();
    let steps = (duration / env.dt()).round() as usize;
    let rows: Result<Vec<IcReport>, HybridError> = ics
        .par_iter()
        .enumerate()
        .map(|(i, &ic)| {
            let (run, seq) = noise.record(env, baseline, ic, steps, i as u64);
            let base_path = match out_dir {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    let p = dir.join(format!("ic{i}_baseline.csv"));
                    std::fs::write(&p, baseline_csv(env, &run))?;
                    Some(p)
                }
                None => None,
            };
            let end = TrajectoryEnd::from(run.cause);
            let last = run.final_state();
            let baseline_record = RunRecord {
                outcome: classify(env, &run.states, end, stuck),
                final_state: last,
                final_distance: last.distance(&env.setpoint()),
                jumps: 0,
                min_dwell: None,
                side: Separation::for_env(env.kind()).side(env, &run.states, to_cause(end)),
                invariant_violations: Vec::new(),
                trajectory: base_path,
            };
            let hybrid = [0u8, 1].map(|q0| -> Result<RunRecord, HybridError> {
                let traj = solve(sys, HybridState::new(ic, q0)?, duration, |k| seq[k], zeno_limit)?;
                let path = match out_dir {
                    Some(dir) => {
                        let stem = format!("ic{i}_hybrid_q{q0}");
                        traj.export(dir, &stem)?;
                        Some(dir.join(format!("{stem}.csv")))
                    }
                    None => None,
                };
                Ok(hybrid_record(sys, &traj, stuck, path))
            });
            let [h0, h1] = hybrid;
            Ok(IcReport {
                ic,
                noise: seq,
                baseline: baseline_record,
                hybrid: [h0?, h1?],
            })
        })
        .collect();
    Ok(ExperimentReport {
        env: env.kind(),
        noise: *noise,
        duration,
        stuck: *stuck,
        config: None,
        rows: rows?,
    })
}

/// Direction check for an initial condition and initial mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidedCheck {
    pub ic: State,
    pub q0: u8,
    pub side: Option<u8>,
    pub jumps: usize,
    /// The run ended on the side selected by `q0`.
    pub consistent: bool,
}

/// Runs the hybrid system from each `(ic, q0)` under `noise` (recorded
/// against `baseline`) and reports whether it travels to side `q0`.
pub fn sided_consistency(
    sys: &HybridSystem,
    baseline: &Policy,
    cases: &[(State, u8)],
    noise: &NoiseModel,
    duration: f64,
    zeno_limit: usize,
) -> Result<Vec<SidedCheck>, HybridError> {
    let env = sys.env();
    let steps = (duration / env.dt()).round() as usize;
    cases
        .par_iter()
        .enumerate()
        .map(|(i, &(ic, q0))| {
            let (_, seq) = noise.record(env, baseline, ic, steps, i as u64);
            let traj = solve(sys, HybridState::new(ic, q0)?, duration, |k| seq[k], zeno_limit)?;
            let side = Separation::for_env(env.kind()).side(env, &traj.states(), to_cause(traj.end));
            Ok(SidedCheck {
                ic,
                q0,
                side,
                jumps: traj.jump_count(),
                consistent: side == Some(q0),
            })
        })
        .collect()
}

/// Initial conditions of the hybrid-versus-baseline comparison.
pub fn comparison_ics(kind: EnvKind) -> Vec<State> {
    match kind {
        EnvKind::UnitCircle => [0.75, 0.9, 1.0, 1.1, 1.25]
            .iter()
            .map(|a| State::on_circle(a * PI))
            .collect(),
        EnvKind::Obstacle => [-0.15, -0.055, 0.0, 0.055, 0.15]
            .iter()
            .map(|&y| State::new(0.0, y))
            .collect(),
    }
}

/// Initial conditions inside the overlap whose direction depends on `q0`.
pub fn overlap_ics(kind: EnvKind) -> Vec<State> {
    match kind {
        EnvKind::UnitCircle => vec![State::on_circle(0.9 * PI), State::on_circle(1.1 * PI)],
        EnvKind::Obstacle => vec![State::new(0.0, -0.055), State::new(0.0, 0.055)],
    }
}

/// Initial conditions of the baseline-failure demonstration.
pub fn baseline_failure_ics(kind: EnvKind) -> Vec<State> {
    match kind {
        EnvKind::UnitCircle => vec![State::new(-0.81, 0.59), State::new(-0.95, -0.31), State::new(-1.0, 0.0)],
        EnvKind::Obstacle => vec![State::new(0.0, 0.15), State::new(0.0, 0.0), State::new(0.0, -0.15)],
    }
}

/// File names of the persisted pipeline artifacts.
pub mod artifacts {
    pub const CONFIG: &str = "config.toml";
    pub const BASELINE_POLICY: &str = "baseline_policy.json";
    pub const BASELINE_METRICS: &str = "baseline_metrics.csv";
    pub const CRITICAL: &str = "critical.region";
    pub const SIDE: [&str; 2] = ["side0.region", "side1.region"];
    pub const WITNESSES: &str = "witnesses.json";
    pub const PARTITION: [&str; 2] = ["m0.region", "m1.region"];
    pub const EXTENDED: [&str; 2] = ["m0_ext.region", "m1_ext.region"];
    pub const POLICY: [&str; 2] = ["policy_q0.json", "policy_q1.json"];
    pub const METRICS: [&str; 2] = ["metrics_q0.csv", "metrics_q1.csv"];
    pub const HYBRID: &str = "hybrid.json";
    pub const SUMMARY: &str = "pipeline.json";
}

pub const STEP_NAMES: [&str; 7] = [
    "train",
    "find-critical",
    "partition",
    "restrict",
    "extend",
    "retrain",
    "assemble",
];

/// Manifest of an assembled hybrid system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridManifest {
    pub env: EnvKind,
    pub policies: [String; 2],
    pub regions: [String; 2],
    pub overlap_width: f64,
    pub zeno_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: u8,
    pub name: String,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub config: RunConfig,
    pub baseline: Policy,
    pub critical: CriticalSet,
    pub partitions: [Region; 2],
    pub extended: [Region; 2],
    pub overlap_width: f64,
    pub policies: [Policy; 2],
    pub system: HybridSystem,
    pub summary: Vec<StepSummary>,
}

fn fail<E>(step: u8) -> impl FnOnce(E) -> PipelineError
where
    E: std::error::Error + Send + Sync + 'static,
{
    move |e| PipelineError {
        step,
        name: STEP_NAMES[step as usize - 1],
        source: Box::new(e),
    }
}

fn require(path: &Path, step: u8) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(fail(step)(ConfigError::MissingArtifact(path.to_path_buf())))
    }
}

fn load_region(path: &Path, step: u8) -> Result<Region, PipelineError> {
    require(path, step)?;
    Region::load(path).map(|(r, _)| r).map_err(fail(step))
}

fn load_policy(path: &Path, step: u8) -> Result<Policy, PipelineError> {
    require(path, step)?;
    Policy::load(path).map_err(fail(step))
}

fn save_region(region: &Region, dir: &Path, name: &str, step: u8) -> Result<(), PipelineError> {
    region
        .save(&dir.join(name), name.trim_end_matches(".region"))
        .map_err(fail(step))
}

fn write(path: &Path, text: &str, step: u8) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(fail(step))
}

fn train_policy<E: crate::rl::TrainingEnv + ?Sized>(
    env: &E,
    cfg: &TrainConfig,
    warm_start: Option<&Policy>,
) -> Result<(Policy, Vec<MetricsRow>, f64), crate::error::RlError> {
    match env.env().kind() {
        EnvKind::UnitCircle => {
            let t = train_ppo(env, cfg, warm_start.and_then(Policy::as_gaussian))?;
            Ok((Policy::Gaussian(t.policy), t.metrics, t.success_rate))
        }
        EnvKind::Obstacle => {
            let t = train_dqn(env, cfg, warm_start.and_then(Policy::as_q))?;
            Ok((Policy::Q(t.policy), t.metrics, t.success_rate))
        }
    }
}

/// Runs pipeline steps `resume_from..=7`, loading the artifacts of earlier
/// steps from `cfg.out_dir`. `progress` receives one summary per step.
pub fn run_pipeline(
    cfg: &RunConfig,
    resume_from: u8,
    progress: impl FnMut(&StepSummary),
) -> Result<PipelineOutput, PipelineError> {
    match run_range(cfg, resume_from, 7, progress)? {
        Stage::Complete(out) => Ok(*out),
        Stage::Partial(_) => unreachable!("the last step always completes the run"),
    }
}

/// Runs pipeline steps `first..=last` only, loading earlier artifacts from
/// `cfg.out_dir`, and returns the summaries of the steps that ran.
pub fn run_steps(
    cfg: &RunConfig,
    first: u8,
    last: u8,
    progress: impl FnMut(&StepSummary),
) -> Result<Vec<StepSummary>, PipelineError> {
    match run_range(cfg, first, last, progress)? {
        Stage::Complete(out) => Ok(out.summary),
        Stage::Partial(summary) => Ok(summary),
    }
}

enum Stage {
    Partial(Vec<StepSummary>),
    Complete(Box<PipelineOutput>),
}

fn run_range(
    cfg: &RunConfig,
    first: u8,
    last: u8,
    mut progress: impl FnMut(&StepSummary),
) -> Result<Stage, PipelineError> {
    let start = first.clamp(1, 7);
    let last = last.clamp(start, 7);
    let dir = cfg.out_dir.as_path();
    cfg.validate().map_err(fail(start))?;
    std::fs::create_dir_all(dir).map_err(fail(start))?;
    write(&dir.join(artifacts::CONFIG), &cfg.to_toml(), start)?;
    let env = Env::new(cfg.env, &cfg.env_config).map_err(fail(start))?;
    let mut summary = Vec::new();
    let mut report = |step: u8, detail: String| {
        let s = StepSummary {
            step,
            name: STEP_NAMES[step as usize - 1].to_string(),
            detail,
        };
        progress(&s);
        summary.push(s);
    };

    // 1: baseline policy
    let baseline = if start <= 1 {
        let (policy, metrics, rate) = train_policy(&env, &cfg.train_config(), None).map_err(fail(1))?;
        policy.save(&dir.join(artifacts::BASELINE_POLICY)).map_err(fail(1))?;
        write_metrics_csv(&dir.join(artifacts::BASELINE_METRICS), &metrics).map_err(fail(1))?;
        report(1, format!("{} policy, success rate {rate:.2}", policy.kind_name()));
        policy
    } else {
        load_policy(&dir.join(artifacts::BASELINE_POLICY), start)?
    };
    if last == 1 {
        return Ok(Stage::Partial(summary));
    }

    // 2: critical set
    let critical = if start <= 2 {
        let cs = find_critical_set(&baseline, &env, &cfg.critical).map_err(fail(2))?;
        save_region(&cs.critical, dir, artifacts::CRITICAL, 2)?;
        for side in 0..2u8 {
            let labelled = Region::from_fn(*cs.critical.grid(), |c| cs.labels[c] == Some(side));
            save_region(&labelled, dir, artifacts::SIDE[side as usize], 2)?;
        }
        let witnesses = serde_json::to_string_pretty(&cs.witnesses).expect("plain data");
        write(&dir.join(artifacts::WITNESSES), &witnesses, 2)?;
        report(2, format!("M* {}", cs.critical.summary()));
        cs
    } else {
        let critical = load_region(&dir.join(artifacts::CRITICAL), start)?;
        let sides = [
            load_region(&dir.join(artifacts::SIDE[0]), start)?,
            load_region(&dir.join(artifacts::SIDE[1]), start)?,
        ];
        let path = dir.join(artifacts::WITNESSES);
        require(&path, start)?;
        let text = std::fs::read_to_string(&path).map_err(fail(start))?;
        let witnesses: Vec<Witness> = serde_json::from_str(&text).map_err(fail(start))?;
        let labels = (0..critical.grid().len())
            .map(|c| {
                if sides[0].contains_cell(c) {
                    Some(0)
                } else if sides[1].contains_cell(c) {
                    Some(1)
                } else {
                    None
                }
            })
            .collect();
        CriticalSet {
            critical,
            labels,
            witnesses,
        }
    };
    if last == 2 {
        return Ok(Stage::Partial(summary));
    }

    // 3: partitions
    let partitions = if start <= 3 {
        let (m0, m1) = partition(&critical).map_err(fail(3))?;
        save_region(&m0, dir, artifacts::PARTITION[0], 3)?;
        save_region(&m1, dir, artifacts::PARTITION[1], 3)?;
        report(3, format!("M0 {}; M1 {}", m0.summary(), m1.summary()));
        [m0, m1]
    } else {
        [
            load_region(&dir.join(artifacts::PARTITION[0]), start)?,
            load_region(&dir.join(artifacts::PARTITION[1]), start)?,
        ]
    };
    if last == 3 {
        return Ok(Stage::Partial(summary));
    }

    // 4: region-restricted copies of the baseline
    if start <= 4 {
        let mut checked = 0;
        for m in &partitions {
            let restricted = restrict_policy(&baseline, m);
            for c in m.cells() {
                let obs = env.observe(m.grid().center(c), 0.0);
                restricted.act(&obs).map_err(fail(4))?;
                checked += 1;
            }
        }
        report(4, format!("baseline restricted to M0 and M1 ({checked} cells)"));
    }
    if last == 4 {
        return Ok(Stage::Partial(summary));
    }

    // 5: extended regions
    let (extended, overlap_width) = if start <= 5 {
        let mut ext = Vec::new();
        for (side, m) in partitions.iter().enumerate() {
            let anchors = critical.side_cells(side as u8);
            let e = extend_region(&env, &baseline, m, &critical.critical, &anchors, &cfg.extend).map_err(fail(5))?;
            save_region(&e.extended, dir, artifacts::EXTENDED[side], 5)?;
            ext.push(e.extended);
        }
        let width = check_overlap(&ext[0], &ext[1], &critical.critical, &cfg.extend).map_err(fail(5))?;
        let e1 = ext.pop().expect("two regions");
        let e0 = ext.pop().expect("two regions");
        report(
            5,
            format!(
                "M0ext {}; M1ext {}; overlap width {} (required {})",
                e0.summary(),
                e1.summary(),
                format_width(env.kind(), width),
                format_width(env.kind(), cfg.extend.min_overlap)
            ),
        );
        ([e0, e1], width)
    } else {
        let e = [
            load_region(&dir.join(artifacts::EXTENDED[0]), start)?,
            load_region(&dir.join(artifacts::EXTENDED[1]), start)?,
        ];
        let width = check_overlap(&e[0], &e[1], &critical.critical, &cfg.extend).map_err(fail(start))?;
        (e, width)
    };
    if last == 5 {
        return Ok(Stage::Partial(summary));
    }

    // 6: one policy per extended region
    let policies = if start <= 6 {
        let mut out = Vec::new();
        let mut rates = Vec::new();
        let uncommitted = critical.uncommitted_cells();
        for (q, region) in extended.iter().enumerate() {
            let domain = if cfg.retrain.include_uncommitted {
                region.union(&uncommitted).map_err(fail(6))?
            } else {
                region.clone()
            };
            let restricted = RestrictedEnv::new(env.clone(), domain);
            let (policy, metrics, rate) =
                train_policy(&restricted, &cfg.retrain_config(q as u8), cfg.retrain.warm_start.then_some(&baseline)).map_err(fail(6))?;
            policy.save(&dir.join(artifacts::POLICY[q])).map_err(fail(6))?;
            write_metrics_csv(&dir.join(artifacts::METRICS[q]), &metrics).map_err(fail(6))?;
            debug_assert_eq!(rate, success_rate(&restricted, |o| policy.act(o)));
            rates.push(rate);
            out.push(policy);
        }
        report(
            6,
            format!("region success rates {:.2} (q=0), {:.2} (q=1)", rates[0], rates[1]),
        );
        let p1 = out.pop().expect("two policies");
        let p0 = out.pop().expect("two policies");
        [p0, p1]
    } else {
        [
            load_policy(&dir.join(artifacts::POLICY[0]), start)?,
            load_policy(&dir.join(artifacts::POLICY[1]), start)?,
        ]
    };
    if last == 6 {
        return Ok(Stage::Partial(summary));
    }

    // 7: hybrid system
    let system = assemble(
        env.clone(),
        policies[0].clone(),
        policies[1].clone(),
        extended[0].clone(),
        extended[1].clone(),
    )
    .map_err(fail(7))?;
    let manifest = HybridManifest {
        env: env.kind(),
        policies: artifacts::POLICY.map(String::from),
        regions: artifacts::EXTENDED.map(String::from),
        overlap_width,
        zeno_limit: cfg.hybrid.zeno_limit,
    };
    write(
        &dir.join(artifacts::HYBRID),
        &serde_json::to_string_pretty(&manifest).expect("plain data"),
        7,
    )?;
    report(7, format!("hybrid system written to {}", dir.join(artifacts::HYBRID).display()));
    write(
        &dir.join(artifacts::SUMMARY),
        &serde_json::to_string_pretty(&summary).expect("plain data"),
        7,
    )?;

    Ok(Stage::Complete(Box::new(PipelineOutput {
        config: cfg.clone(),
        baseline,
        critical,
        partitions,
        extended,
        overlap_width,
        policies,
        system,
        summary,
    })))
}

/// Width with its unit: multiples of π on the circle.
pub fn format_width(kind: EnvKind, w: f64) -> String {
    match kind {
        EnvKind::UnitCircle => format!("{:.3}π", w / PI),
        EnvKind::Obstacle => format!("{w:.3}"),
    }
}

/// Loads an assembled hybrid system and the baseline from a run directory.
pub fn load_run(dir: &Path) -> Result<(RunConfig, Policy, HybridSystem), PipelineError> {
    let cfg_path = dir.join(artifacts::CONFIG);
    let cfg = RunConfig::load(&cfg_path).map_err(fail(7))?;
    let path = dir.join(artifacts::HYBRID);
    require(&path, 7)?;
    let text = std::fs::read_to_string(&path).map_err(fail(7))?;
    let manifest: HybridManifest = serde_json::from_str(&text).map_err(fail(7))?;
    let env = Env::new(cfg.env, &cfg.env_config).map_err(fail(7))?;
    let baseline = load_policy(&dir.join(artifacts::BASELINE_POLICY), 7)?;
    let [p0, p1] = manifest.policies.clone().map(|p| dir.join(p));
    let [r0, r1] = manifest.regions.clone().map(|r| dir.join(r));
    let sys = assemble(
        env,
        load_policy(&p0, 7)?,
        load_policy(&p1, 7)?,
        load_region(&r0, 7)?,
        load_region(&r1, 7)?,
    )
    .map_err(fail(7))?;
    Ok((cfg, baseline, sys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::DEFAULT_ZENO_LIMIT;
    use crate::nn::Mlp;
    use crate::region::Grid;
    use crate::rl::{GaussianPolicy, Normalizer};

    /// Saturated switching policy: clockwise below `switch`, counterclockwise above.
    fn switching(env: &Env, switch: f64) -> Policy {
        // mean = tanh-free linear readout of -sin(angle - switch) scaled up,
        // approximated through the normalized y coordinate of a rotated frame
        let mut net = Mlp::zeros(&[2, 1, 1]);
        let (s, c) = switch.sin_cos();
        {
            let (w, b) = net.layer_mut(0);
            // hidden = tanh(40 * (sin(switch) x - cos(switch) y)) ∝ sin(switch - angle)
            w[0] = 40.0 * s;
            w[1] = -40.0 * c;
            b[0] = 0.0;
        }
        {
            let (w, b) = net.layer_mut(1);
            w[0] = -1.0;
            b[0] = 0.0;
        }
        Policy::Gaussian(GaussianPolicy {
            mean_net: net,
            log_std: vec![0.0],
            action_bounds: (-1.0, 1.0),
            normalizer: Normalizer::for_env(env),
            value_net: None,
        })
    }

    fn constant(env: &Env, u: f64) -> Policy {
        let mut net = Mlp::zeros(&[2, 1, 1]);
        let n = net.num_params();
        net.params_mut()[n - 1] = u;
        Policy::Gaussian(GaussianPolicy {
            mean_net: net,
            log_std: vec![0.0],
            action_bounds: (-1.0, 1.0),
            normalizer: Normalizer::for_env(env),
            value_net: None,
        })
    }

    fn arc(lo: f64, hi: f64) -> Region {
        let grid = Grid::angular(0.01);
        Region::from_fn(grid, |c| {
            let a = grid.center(c).angle();
            a >= lo && a <= hi
        })
    }

    fn system() -> (Env, Policy, HybridSystem) {
        let env = Env::unit_circle();
        let base = switching(&env, PI);
        let sys = assemble(
            env.clone(),
            constant(&env, -1.0),
            constant(&env, 1.0),
            arc(0.0, 1.13 * PI),
            arc(0.87 * PI, 2.0 * PI),
        )
        .unwrap();
        (env, base, sys)
    }

    #[test]
    fn switching_fixture_turns_toward_the_nearer_direction() {
        let env = Env::unit_circle();
        let p = switching(&env, PI);
        assert!(p.act(&env.observe(State::on_circle(0.8 * PI), 0.0)) < -0.9);
        assert!(p.act(&env.observe(State::on_circle(1.2 * PI), 0.0)) > 0.9);
    }

    #[test]
    fn stuck_criterion_matches_definition() {
        let c = StuckCriterion::default();
        let goal = State::new(1.0, 0.0);
        let still: Vec<State> = (0..41).map(|k| State::new(0.0, 1e-3 * (k % 2) as f64)).collect();
        assert!(c.is_stuck(&still, 0.1, &goal));
        let moving: Vec<State> = (0..41).map(|k| State::new(0.01 * k as f64, 0.0)).collect();
        let chatter: Vec<State> = (0..41).map(|k| State::new(0.0, 0.1 * (k % 2) as f64)).collect();
        assert!(c.is_stuck(&chatter, 0.1, &goal));
        assert!(!c.is_stuck(&moving, 0.1, &goal));
        assert!(!c.is_stuck(&still[..10], 0.1, &goal));
    }

    #[test]
    fn noise_samples_are_bounded_and_reproducible() {
        let (env, base, _) = system();
        for mode in [NoiseMode::Uniform, NoiseMode::Adversarial] {
            let noise = NoiseModel { magnitude: 0.1, mode, seed: 3 };
            let (_, a) = noise.record(&env, &base, State::on_circle(0.6 * PI), 40, 2);
            let (_, b) = noise.record(&env, &base, State::on_circle(0.6 * PI), 40, 2);
            assert_eq!(a.len(), 40);
            assert_eq!(a, b);
            assert!(a.iter().all(|n| n.abs() <= 0.1));
        }
    }

    #[test]
    fn adversarial_noise_pins_the_baseline_and_not_the_hybrid() {
        let (_, base, sys) = system();
        let noise = NoiseModel { magnitude: 0.1, mode: NoiseMode::Adversarial, seed: 0 };
        let report = compare(&base, &sys, &comparison_ics(EnvKind::UnitCircle), &noise, 4.0, &StuckCriterion::default(), DEFAULT_ZENO_LIMIT, None).unwrap();
        let at_pi = &report.rows[2];
        assert_eq!(at_pi.baseline.outcome, Outcome::Stuck, "{}\n{:?}", report.table(), at_pi.noise);
        for row in &report.rows {
            for h in &row.hybrid {
                assert_eq!(h.outcome, Outcome::Reached, "{}", report.table());
                assert!(h.invariant_violations.is_empty());
            }
        }
    }

    #[test]
    fn noise_free_runs_reach_from_noncritical_states() {
        let (_, base, sys) = system();
        let ics = [State::on_circle(0.75 * PI), State::on_circle(1.25 * PI)];
        let report = compare(&base, &sys, &ics, &NoiseModel::none(), 4.0, &StuckCriterion::default(), 100, None).unwrap();
        for row in &report.rows {
            assert_eq!(row.baseline.outcome, Outcome::Reached);
            assert!(row.hybrid.iter().all(|h| h.outcome == Outcome::Reached));
            assert!(row.noise.iter().all(|&n| n == 0.0));
        }
    }

    #[test]
    fn overlap_states_follow_the_initial_mode() {
        let (_, base, sys) = system();
        let cases: Vec<(State, u8)> = overlap_ics(EnvKind::UnitCircle)
            .into_iter()
            .flat_map(|s| [(s, 0), (s, 1)])
            .collect();
        let checks = sided_consistency(&sys, &base, &cases, &NoiseModel::none(), 4.0, 100).unwrap();
        assert!(checks.iter().all(|c| c.consistent), "{checks:?}");
        // outside the overlap the direction does not depend on q0
        let outside = [(State::on_circle(0.5 * PI), 0), (State::on_circle(0.5 * PI), 1)];
        let checks = sided_consistency(&sys, &base, &outside, &NoiseModel::none(), 4.0, 100).unwrap();
        assert_eq!(checks[0].side, checks[1].side);
        assert!(checks[1].jumps <= 1);
    }

    #[test]
    fn classification_is_sound() {
        let env = Env::obstacle();
        let crash = vec![State::new(0.7, 0.0), State::new(0.85, 0.0)];
        assert_eq!(classify(&env, &crash, TrajectoryEnd::Crashed, &StuckCriterion::default()), Outcome::Crashed);
        let done = vec![State::new(2.95, 0.0)];
        assert_eq!(classify(&env, &done, TrajectoryEnd::Duration, &StuckCriterion::default()), Outcome::Reached);
    }

    #[test]
    fn paper_fixtures() {
        assert_eq!(comparison_ics(EnvKind::Obstacle)[2], State::new(0.0, 0.0));
        assert!((comparison_ics(EnvKind::UnitCircle)[2].angle() - PI).abs() < 1e-12);
        assert_eq!(overlap_ics(EnvKind::Obstacle).len(), 2);
        assert_eq!(baseline_failure_ics(EnvKind::UnitCircle)[2], State::new(-1.0, 0.0));
    }
}
