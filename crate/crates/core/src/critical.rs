//! Critical-set detection and the two-sided partition of the state space.
//!
//! A grid cell is critical when two probe states within `probe_radius` of its
//! centre produce closed-loop trajectories that end on opposite sides of the
//! environment's separation rule. Every other cell is labelled with the side
//! its own centre reaches; the two partitions are those labels joined with the
//! critical set.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{angle_diff, Env, EnvKind, Observation, State, TerminationCause};
use crate::error::{CriticalError, RegionError};
use crate::region::{Grid, Region};
use crate::rl::Policy;

/// Rule deciding which side a closed-loop trajectory belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Separation {
    /// Side 0: net clockwise travel; side 1: net counterclockwise travel.
    Rotation,
    /// Side 0: above the obstacle when passing its trailing edge; side 1: below.
    /// Crashing or starting past the obstacle belongs to neither side.
    ObstaclePassage,
}

impl Separation {
    pub fn for_env(kind: EnvKind) -> Self {
        match kind {
            EnvKind::UnitCircle => Separation::Rotation,
            EnvKind::Obstacle => Separation::ObstaclePassage,
        }
    }

    /// Side reached by a trajectory, or `None` when it commits to neither.
    pub fn side(&self, env: &Env, states: &[State], cause: Option<TerminationCause>) -> Option<u8> {
        match self {
            Separation::Rotation => {
                let travel: f64 = states
                    .windows(2)
                    .map(|w| angle_diff(w[0].angle(), w[1].angle()))
                    .sum();
                if travel < 0.0 {
                    Some(0)
                } else if travel > 0.0 {
                    Some(1)
                } else {
                    None
                }
            }
            Separation::ObstaclePassage => {
                let edge = env.obstacle_rect()?.x_max;
                if states[0].x >= edge || cause == Some(TerminationCause::Crashed) {
                    return None;
                }
                let passing = states.iter().find(|s| s.x >= edge)?;
                if passing.y > 0.0 {
                    Some(0)
                } else if passing.y < 0.0 {
                    Some(1)
                } else {
                    None
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalConfig {
    pub probe_radius: f64,
    /// Simulated duration of each probe trajectory, in seconds.
    pub horizon: f64,
    /// Grid cell size (radians on the circle, state units in the box).
    pub resolution: f64,
    pub probe_directions: usize,
    pub separation: Separation,
}

impl CriticalConfig {
    pub fn for_env(kind: EnvKind) -> Self {
        Self {
            probe_radius: 0.05,
            horizon: 4.0,
            resolution: match kind {
                EnvKind::UnitCircle => 0.01,
                EnvKind::Obstacle => 0.05,
            },
            probe_directions: 8,
            separation: Separation::for_env(kind),
        }
    }

    pub fn validate(&self, env: &Env) -> Result<(), CriticalError> {
        let bad = |m: &str| Err(CriticalError::InvalidConfig(m.to_string()));
        if !(self.probe_radius > 0.0) || !(self.horizon > 0.0) || !(self.resolution > 0.0) {
            return bad("probe radius, horizon and resolution must be positive");
        }
        if self.probe_directions == 0 {
            return bad("at least one probe direction is required");
        }
        if self.separation != Separation::for_env(env.kind()) {
            return bad("separation rule does not match the environment");
        }
        Ok(())
    }

    fn steps(&self, env: &Env) -> usize {
        (self.horizon / env.dt()).round().max(1.0) as usize
    }
}

/// Two probe states whose trajectories reach opposite sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub cell: usize,
    pub side0: State,
    pub side1: State,
}

/// Output of [`find_critical_set`].
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalSet {
    pub critical: Region,
    /// Side reached from each cell centre (`None` if it commits to neither).
    pub labels: Vec<Option<u8>>,
    /// One witness per critical cell, in cell order.
    pub witnesses: Vec<Witness>,
}

impl CriticalSet {
    /// Non-critical cells whose centre trajectory reaches `side`.
    pub fn side_cells(&self, side: u8) -> Region {
        Region::from_fn(*self.critical.grid(), |c| {
            !self.critical.contains_cell(c) && self.labels[c] == Some(side)
        })
    }

    /// Non-critical cells whose centre trajectory commits to neither side.
    pub fn uncommitted_cells(&self) -> Region {
        Region::from_fn(*self.critical.grid(), |c| {
            !self.critical.contains_cell(c) && self.labels[c].is_none()
        })
    }
}

/// Noise-free side reached from `s0` within `steps` steps.
pub fn side_from(env: &Env, policy: &Policy, sep: Separation, s0: State, steps: usize) -> Option<u8> {
    let mut states = vec![s0];
    let mut cause = env.event(&s0);
    let mut s = s0;
    if cause.is_none() {
        for _ in 0..steps {
            let r = env.step_unchecked(s, policy.act(&env.observe(s, 0.0)));
            s = r.next_state;
            states.push(s);
            if r.cause.is_some() {
                cause = r.cause;
                break;
            }
        }
    }
    sep.side(env, &states, cause)
}

/// Probe states around `s`: the centre followed by `n` points at radius `rho`,
/// mapped back onto the constraint set.
pub fn probes(env: &Env, s: State, rho: f64, n: usize) -> Vec<State> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(s);
    for k in 0..n {
        let theta = std::f64::consts::TAU * k as f64 / n as f64;
        let p = State::new(s.x + rho * theta.cos(), s.y + rho * theta.sin());
        out.push(match env {
            Env::UnitCircle(_) => env.project(p),
            Env::Obstacle(_) => {
                let b = crate::envs::ObstacleEnv::STATE_BOX;
                State::new(p.x.clamp(b.x_min, b.x_max), p.y.clamp(b.y_min, b.y_max))
            }
        });
    }
    out
}

/// Locates the critical set of `policy` by probing every grid cell.
pub fn find_critical_set(
    policy: &Policy,
    env: &Env,
    cfg: &CriticalConfig,
) -> Result<CriticalSet, CriticalError> {
    cfg.validate(env)?;
    let grid = Grid::for_env(env, cfg.resolution);
    let steps = cfg.steps(env);
    let per_cell: Vec<(Option<u8>, Option<Witness>)> = (0..grid.len())
        .into_par_iter()
        .map(|cell| {
            let pts = probes(env, grid.center(cell), cfg.probe_radius, cfg.probe_directions);
            let mut first = [None, None];
            let mut centre = None;
            for (k, p) in pts.iter().enumerate() {
                let side = side_from(env, policy, cfg.separation, *p, steps);
                if k == 0 {
                    centre = side;
                }
                if let Some(q) = side {
                    first[q as usize].get_or_insert(*p);
                }
            }
            let witness = match first {
                [Some(side0), Some(side1)] => Some(Witness { cell, side0, side1 }),
                _ => None,
            };
            (centre, witness)
        })
        .collect();

    let mut critical = Region::empty(grid);
    let mut labels = Vec::with_capacity(per_cell.len());
    let mut witnesses = Vec::new();
    for (cell, (label, witness)) in per_cell.into_iter().enumerate() {
        labels.push(label);
        if let Some(w) = witness {
            critical.insert(cell);
            witnesses.push(w);
        }
    }
    if critical.is_empty() {
        return Err(CriticalError::NoCriticalPoints);
    }
    Ok(CriticalSet {
        critical,
        labels,
        witnesses,
    })
}

/// Re-simulates a witness pair; true when both ends still reach opposite sides.
pub fn verify_witness(env: &Env, policy: &Policy, cfg: &CriticalConfig, w: &Witness) -> bool {
    let steps = cfg.steps(env);
    side_from(env, policy, cfg.separation, w.side0, steps) == Some(0)
        && side_from(env, policy, cfg.separation, w.side1, steps) == Some(1)
}

/// Splits the state space into the two sides, each joined with the critical set.
///
/// Non-critical cells whose centre commits to neither side take the label of
/// the nearest labelled cell (breadth-first over grid adjacency). Fails when
/// either side is disconnected.
pub fn partition(cs: &CriticalSet) -> Result<(Region, Region), CriticalError> {
    let grid = *cs.critical.grid();
    let mut side: Vec<Option<u8>> = (0..grid.len())
        .map(|c| if cs.critical.contains_cell(c) { None } else { cs.labels[c] })
        .collect();
    let mut queue: VecDeque<usize> = (0..grid.len()).filter(|&c| side[c].is_some()).collect();
    if queue.is_empty() {
        return Err(CriticalError::UnsupportedTopology { components: 0 });
    }
    while let Some(c) = queue.pop_front() {
        for n in grid.neighbors(c) {
            if side[n].is_none() && !cs.critical.contains_cell(n) {
                side[n] = side[c];
                queue.push_back(n);
            }
        }
    }
    let m0 = Region::from_fn(grid, |c| cs.critical.contains_cell(c) || side[c] == Some(0));
    let m1 = Region::from_fn(grid, |c| cs.critical.contains_cell(c) || side[c] == Some(1));
    let (k0, k1) = (m0.components(), m1.components());
    let uncovered = m0.union(&m1)?.complement().count();
    if k0 != 1 || k1 != 1 || uncovered > 0 {
        return Err(CriticalError::UnsupportedTopology {
            components: k0 + k1 + usize::from(uncovered > 0),
        });
    }
    Ok((m0, m1))
}

/// A policy whose queries are only valid inside `region`.
#[derive(Debug, Clone)]
pub struct RestrictedPolicy<'a> {
    pub policy: &'a Policy,
    pub region: &'a Region,
}

pub fn restrict_policy<'a>(policy: &'a Policy, region: &'a Region) -> RestrictedPolicy<'a> {
    RestrictedPolicy { policy, region }
}

impl RestrictedPolicy<'_> {
    pub fn act(&self, obs: &Observation) -> Result<f64, RegionError> {
        if self.region.contains(&obs.as_state()) {
            Ok(self.policy.act(obs))
        } else {
            Err(RegionError::OutOfRegion)
        }
    }
}
