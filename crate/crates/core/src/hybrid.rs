//! Hysteresis-switching closed loop built from two region policies.
//!
//! The hybrid state is `(ξ, q)`. While the observed state lies in the
//! extended region of mode `q` the system flows under that mode's policy;
//! otherwise `q` toggles and `ξ` is left unchanged. Solutions are sampled on
//! a hybrid time domain indexed by time `t` and jump counter `j`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{Env, State, TerminationCause};
use crate::error::HybridError;
use crate::region::Region;
use crate::rl::Policy;

/// Jumps allowed within one solve before the solver gives up.
pub const DEFAULT_ZENO_LIMIT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridState {
    pub xi: State,
    pub q: u8,
}

impl HybridState {
    pub fn new(xi: State, q: u8) -> Result<Self, HybridError> {
        if q > 1 {
            return Err(HybridError::InvalidLogicVariable(q));
        }
        Ok(Self { xi, q })
    }
}

/// The hybrid closed loop: policies and extended regions indexed by `q`.
#[derive(Debug, Clone)]
pub struct HybridSystem {
    env: Env,
    policies: [Policy; 2],
    regions: [Region; 2],
}

/// Checks coverage and builds the hybrid system.
pub fn assemble(
    env: Env,
    policy0: Policy,
    policy1: Policy,
    region0: Region,
    region1: Region,
) -> Result<HybridSystem, HybridError> {
    if !region0.union(&region1)?.is_full() {
        return Err(HybridError::CoverageViolation);
    }
    Ok(HybridSystem {
        env,
        policies: [policy0, policy1],
        regions: [region0, region1],
    })
}

impl HybridSystem {
    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn policy(&self, q: u8) -> &Policy {
        &self.policies[q as usize]
    }

    pub fn region(&self, q: u8) -> &Region {
        &self.regions[q as usize]
    }

    /// Flow set of mode `q`: the extended region itself.
    pub fn flow_set(&self, q: u8) -> Region {
        self.regions[q as usize].clone()
    }

    /// Jump set of mode `q`: the closure of the region's complement, i.e. the
    /// complement together with the region's boundary band.
    pub fn jump_set(&self, q: u8) -> Region {
        let r = &self.regions[q as usize];
        Region::from_fn(*r.grid(), |c| !r.contains_cell(c))
            .union(&r.boundary_cells())
            .expect("same grid")
    }

    pub fn in_flow_set(&self, z: &HybridState) -> bool {
        self.regions[z.q as usize].contains(&z.xi)
    }

    pub fn in_jump_set(&self, z: &HybridState) -> bool {
        let r = &self.regions[z.q as usize];
        let cell = r.grid().cell_of(&z.xi);
        !r.contains_cell(cell) || r.boundary_cells().contains_cell(cell)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepEvent {
    Flow,
    Jump,
}

/// Result of one hybrid step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: HybridState,
    pub event: StepEvent,
    /// Observed state on which the decision was taken.
    pub observed: State,
    /// Applied action (flows only).
    pub action: Option<f64>,
    pub reward: f64,
    /// Environment termination reached by a flow step.
    pub cause: Option<TerminationCause>,
}

/// One flow step under `π_q`, or a toggle of `q` when the observation has
/// left `M_q`. Flow wins on the shared boundary band.
pub fn hybrid_step(sys: &HybridSystem, z: HybridState, perturbation: f64) -> Result<StepOutcome, HybridError> {
    if z.q > 1 {
        return Err(HybridError::InvalidLogicVariable(z.q));
    }
    if !sys.env.in_constraint_set(&z.xi) {
        return Err(HybridError::OutsideFlowAndJumpSets);
    }
    let obs = sys.env.observe(z.xi, perturbation);
    let observed = obs.as_state();
    if sys.regions[z.q as usize].contains(&observed) {
        let u = sys.policies[z.q as usize].act(&obs);
        let r = sys.env.step_unchecked(z.xi, u);
        Ok(StepOutcome {
            next: HybridState { xi: r.next_state, q: z.q },
            event: StepEvent::Flow,
            observed,
            action: Some(u),
            reward: r.reward,
            cause: r.cause,
        })
    } else {
        Ok(StepOutcome {
            next: HybridState { xi: z.xi, q: 1 - z.q },
            event: StepEvent::Jump,
            observed,
            action: None,
            reward: 0.0,
            cause: None,
        })
    }
}

/// A point on a flow arc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub t: f64,
    pub xi: State,
    /// Observed state used for the decision taken at this sample.
    pub observed: Option<State>,
    /// Action applied from this sample; `None` at the end of an arc.
    pub u: Option<f64>,
    /// Reward received on arriving at this sample.
    pub reward: f64,
}

/// A maximal flow interval at fixed jump count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSegment {
    pub j: usize,
    pub q: u8,
    pub samples: Vec<FlowSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub t: f64,
    /// Jump count before the jump.
    pub j: usize,
    pub q_from: u8,
    pub q_to: u8,
    pub xi: State,
    pub observed: State,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryEnd {
    ReachedSetpoint,
    Crashed,
    LeftDomain,
    Duration,
}

impl From<TerminationCause> for TrajectoryEnd {
    fn from(c: TerminationCause) -> Self {
        match c {
            TerminationCause::ReachedSetpoint => TrajectoryEnd::ReachedSetpoint,
            TerminationCause::Crashed => TrajectoryEnd::Crashed,
            TerminationCause::LeftDomain => TrajectoryEnd::LeftDomain,
            TerminationCause::Horizon => TrajectoryEnd::Duration,
        }
    }
}

impl fmt::Display for TrajectoryEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrajectoryEnd::ReachedSetpoint => "reached_setpoint",
            TrajectoryEnd::Crashed => "crashed",
            TrajectoryEnd::LeftDomain => "left_domain",
            TrajectoryEnd::Duration => "duration",
        })
    }
}

/// A solution on a hybrid time domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridTrajectory {
    pub segments: Vec<FlowSegment>,
    pub jumps: Vec<JumpRecord>,
    pub end: TrajectoryEnd,
}

/// Summary written next to a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub end: TrajectoryEnd,
    pub jumps: usize,
    pub final_state: State,
    pub final_q: u8,
    pub duration: f64,
}

pub const CSV_HEADER: &str = "t,j,x,y,q,u,reward,event";

impl HybridTrajectory {
    pub fn final_state(&self) -> HybridState {
        let seg = self.segments.last().expect("a trajectory has at least one segment");
        let s = seg.samples.last().expect("segments are never empty");
        HybridState { xi: s.xi, q: seg.q }
    }

    pub fn final_time(&self) -> f64 {
        self.segments
            .last()
            .and_then(|s| s.samples.last())
            .map_or(0.0, |s| s.t)
    }

    /// All sampled states in time order (jump points appear once).
    pub fn states(&self) -> Vec<State> {
        let mut out: Vec<State> = Vec::new();
        for (k, seg) in self.segments.iter().enumerate() {
            let skip = usize::from(k > 0);
            out.extend(seg.samples.iter().skip(skip).map(|s| s.xi));
        }
        out
    }

    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    /// Violations of the hybrid-time-domain invariants, empty when well formed.
    pub fn invariant_violations(&self, sys: &HybridSystem) -> Vec<String> {
        let mut errs = Vec::new();
        let mut last_t = f64::NEG_INFINITY;
        for (k, seg) in self.segments.iter().enumerate() {
            if seg.j != k {
                errs.push(format!("segment {k} carries jump count {}", seg.j));
            }
            if seg.samples.is_empty() {
                errs.push(format!("segment {k} is empty"));
            }
            for s in &seg.samples {
                if s.t < last_t {
                    errs.push(format!("time decreases at t={}", s.t));
                }
                last_t = s.t;
                if s.u.is_some() {
                    let obs = s.observed.unwrap_or(s.xi);
                    if !sys.region(seg.q).contains(&obs) {
                        errs.push(format!("flow outside C at t={} q={}", s.t, seg.q));
                    }
                }
            }
        }
        for (k, jump) in self.jumps.iter().enumerate() {
            if jump.j != k || jump.q_to != 1 - jump.q_from {
                errs.push(format!("jump {k} has j={} q {}→{}", jump.j, jump.q_from, jump.q_to));
            }
            let (Some(before), Some(after)) = (self.segments.get(k), self.segments.get(k + 1)) else {
                errs.push(format!("jump {k} lacks its adjacent segments"));
                continue;
            };
            let end = before.samples.last().map(|s| s.xi);
            let start = after.samples.first().map(|s| s.xi);
            if end != Some(jump.xi) || start != Some(jump.xi) {
                errs.push(format!("state changes across jump {k}"));
            }
            if before.q != jump.q_from || after.q != jump.q_to {
                errs.push(format!("mode mismatch at jump {k}"));
            }
            if sys.region(jump.q_from).contains(&jump.observed) {
                errs.push(format!("jump {k} taken from inside the flow set"));
            }
        }
        if self.segments.len() != self.jumps.len() + 1 {
            errs.push("segment count does not match jump count".into());
        }
        errs
    }

    /// Smallest transversal distance travelled between consecutive jumps;
    /// `None` with fewer than two jumps.
    pub fn min_dwell(&self, env: &Env) -> Option<f64> {
        self.jumps
            .windows(2)
            .map(|w| transversal_distance(env, &w[0].xi, &w[1].xi))
            .reduce(f64::min)
    }

    pub fn manifest(&self) -> TrajectoryManifest {
        let z = self.final_state();
        TrajectoryManifest {
            end: self.end,
            jumps: self.jump_count(),
            final_state: z.xi,
            final_q: z.q,
            duration: self.final_time(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (k, seg) in self.segments.iter().enumerate() {
            for (i, s) in seg.samples.iter().enumerate() {
                let event = if k == 0 && i == 0 {
                    "start"
                } else if i == 0 {
                    "jump"
                } else {
                    "flow"
                };
                out.push_str(&csv_row(s.t, seg.j, s.xi, Some(seg.q), s.u, s.reward, event));
            }
        }
        let z = self.final_state();
        out.push_str(&csv_row(
            self.final_time(),
            self.jump_count(),
            z.xi,
            Some(z.q),
            None,
            0.0,
            &format!("end:{}", self.end),
        ));
        out
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<(), HybridError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let mut f = std::fs::File::create(dir.join(format!("{stem}.json")))?;
        f.write_all(serde_json::to_string_pretty(&self.manifest()).expect("plain data").as_bytes())?;
        Ok(())
    }
}

/// One CSV line in the trajectory format; `q` and `u` may be blank.
pub fn csv_row(t: f64, j: usize, xi: State, q: Option<u8>, u: Option<f64>, reward: f64, event: &str) -> String {
    let q = q.map(|q| q.to_string()).unwrap_or_default();
    let u = u.map(|u| format!("{u:.9}")).unwrap_or_default();
    format!("{t:.4},{j},{:.9},{:.9},{q},{u},{reward:.9},{event}\n", xi.x, xi.y)
}

/// Transversal distance: arc length on the circle, `|Δy|` in the box.
pub fn transversal_distance(env: &Env, a: &State, b: &State) -> f64 {
    match env {
        Env::UnitCircle(_) => crate::envs::angle_diff(a.angle(), b.angle()).abs(),
        Env::Obstacle(_) => (a.y - b.y).abs(),
    }
}

/// Simulates the hybrid closed loop for `duration` seconds.
///
/// `noise(k)` is the measurement perturbation at time step `k`; a jump and
/// the flow step following it share the same sample.
pub fn solve<N>(
    sys: &HybridSystem,
    z0: HybridState,
    duration: f64,
    mut noise: N,
    zeno_limit: usize,
) -> Result<HybridTrajectory, HybridError>
where
    N: FnMut(usize) -> f64,
{
    HybridState::new(z0.xi, z0.q)?;
    let steps = (duration / sys.env.dt()).round() as usize;
    let dt = sys.env.dt();
    let mut segments = vec![FlowSegment {
        j: 0,
        q: z0.q,
        samples: vec![FlowSample { t: 0.0, xi: z0.xi, observed: None, u: None, reward: 0.0 }],
    }];
    let mut jumps = Vec::new();
    if let Some(cause) = sys.env.event(&z0.xi) {
        return Ok(HybridTrajectory { segments, jumps, end: cause.into() });
    }
    let mut z = z0;
    let mut k = 0;
    while k < steps {
        let t = k as f64 * dt;
        let out = hybrid_step(sys, z, noise(k))?;
        match out.event {
            StepEvent::Jump => {
                if jumps.len() >= zeno_limit {
                    return Err(HybridError::ZenoGuard { limit: zeno_limit });
                }
                let seg = segments.last_mut().expect("nonempty");
                let last = seg.samples.last_mut().expect("nonempty");
                last.observed = Some(out.observed);
                jumps.push(JumpRecord {
                    t,
                    j: jumps.len(),
                    q_from: z.q,
                    q_to: out.next.q,
                    xi: z.xi,
                    observed: out.observed,
                });
                segments.push(FlowSegment {
                    j: jumps.len(),
                    q: out.next.q,
                    samples: vec![FlowSample { t, xi: z.xi, observed: None, u: None, reward: 0.0 }],
                });
            }
            StepEvent::Flow => {
                let seg = segments.last_mut().expect("nonempty");
                let last = seg.samples.last_mut().expect("nonempty");
                last.u = out.action;
                last.observed = Some(out.observed);
                k += 1;
                seg.samples.push(FlowSample {
                    t: k as f64 * dt,
                    xi: out.next.xi,
                    observed: None,
                    u: None,
                    reward: out.reward,
                });
                if let Some(cause) = out.cause {
                    return Ok(HybridTrajectory { segments, jumps, end: cause.into() });
                }
            }
        }
        z = out.next;
    }
    Ok(HybridTrajectory { segments, jumps, end: TrajectoryEnd::Duration })
}
