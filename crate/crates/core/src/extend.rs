//! Overlapping extensions of the two partitions by backward-in-time
//! propagation from the neighbourhood of the critical set.
//!
//! Backward trajectories are driven by the sided policy of a partition: the
//! trained policy where the partition is committed to its side (outside the
//! critical set), and the action of the nearest committed cell everywhere
//! else. Every grid cell crossed by such a trajectory outside the partition is
//! added to it.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{Env, ObstacleEnv, State};
use crate::error::ExtendError;
use crate::region::{Grid, Region};
use crate::rl::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtensionConfig {
    /// Backward propagation horizon in seconds.
    pub horizon: f64,
    /// Integration step in seconds; `None` uses the environment step.
    pub step: Option<f64>,
    /// Seeds are the partition cells within this many grid cells
    /// (8-neighbourhood rings) of the critical set.
    pub seed_radius: usize,
    /// Also seed from the critical cells themselves.
    pub seed_critical: bool,
    /// Required overlap width (the measurement-noise bound).
    pub min_overlap: f64,
}

impl Default for ExtensionConfig {
    fn default() -> Self {
        Self {
            horizon: 0.5,
            step: None,
            seed_radius: 3,
            seed_critical: false,
            min_overlap: 0.1,
        }
    }
}

impl ExtensionConfig {
    pub fn validate(&self) -> Result<(), ExtendError> {
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(ExtendError::InvalidConfig("horizon must be non-negative".into()));
        }
        if matches!(self.step, Some(h) if !(h > 0.0)) {
            return Err(ExtendError::InvalidConfig("integration step must be positive".into()));
        }
        if !(self.min_overlap >= 0.0) {
            return Err(ExtendError::InvalidConfig("minimum overlap must be non-negative".into()));
        }
        Ok(())
    }
}

/// `-f(ξ, u)`: the vector field of the backward-in-time system.
pub fn backward_flow(env: &Env, s: State, u: f64) -> [f64; 2] {
    let f = env.flow_unchecked(s, u);
    [-f[0], -f[1]]
}

/// The trained policy continued past its partition: anchor cells (those
/// whose own trajectory shows the partition's behaviour) use the policy
/// directly; all other cells use the action at the centre of the nearest
/// anchor cell.
#[derive(Debug, Clone)]
pub struct SidedPolicy<'a> {
    policy: &'a Policy,
    env: &'a Env,
    grid: Grid,
    committed: Region,
    nearest: Vec<usize>,
}

impl<'a> SidedPolicy<'a> {
    pub fn new(env: &'a Env, policy: &'a Policy, anchors: Region) -> Result<Self, ExtendError> {
        if anchors.is_empty() {
            return Err(ExtendError::InvalidConfig("partition has no anchor cells".into()));
        }
        let committed = anchors;
        let grid = *committed.grid();
        // multi-source breadth-first search, sources in cell order
        let mut nearest = vec![usize::MAX; grid.len()];
        let mut queue = VecDeque::new();
        for c in committed.cells() {
            nearest[c] = c;
            queue.push_back(c);
        }
        while let Some(c) = queue.pop_front() {
            for n in grid.neighborhood(c) {
                if nearest[n] == usize::MAX {
                    nearest[n] = nearest[c];
                    queue.push_back(n);
                }
            }
        }
        Ok(Self {
            policy,
            env,
            grid,
            committed,
            nearest,
        })
    }

    pub fn act(&self, s: State) -> f64 {
        let cell = self.grid.cell_of(&s);
        let at = if self.committed.contains_cell(cell) {
            s
        } else {
            self.grid.center(self.nearest[cell])
        };
        self.policy.act(&self.env.observe(at, 0.0))
    }
}

/// An extended partition together with the witnesses for its added cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    pub extended: Region,
    /// Cells added outside the partition.
    pub added: Region,
    /// For each added cell (in cell order), the seed whose backward
    /// trajectory first crossed it.
    pub witnesses: Vec<(usize, State)>,
}

fn inside_domain(env: &Env, s: &State) -> bool {
    match env {
        Env::UnitCircle(_) => true,
        Env::Obstacle(o) => ObstacleEnv::STATE_BOX.contains(s) && !o.obstacle.contains(s),
    }
}

/// Cells crossed by the backward trajectory of `sided` from `seed`, in order
/// of first crossing.
pub fn backward_cells(env: &Env, sided: &SidedPolicy, seed: State, cfg: &ExtensionConfig) -> Vec<usize> {
    let grid = sided.grid;
    let h = cfg.step.unwrap_or_else(|| env.dt());
    let steps = (cfg.horizon / h).round() as usize;
    // sub-samples per segment so no cell along the segment is skipped
    let cell = grid.transversal_step().min(grid.x_step());
    let mut out = vec![grid.cell_of(&seed)];
    let mut s = seed;
    for _ in 0..steps {
        let v = backward_flow(env, s, sided.act(s));
        let raw = State::new(s.x + h * v[0], s.y + h * v[1]);
        let next = match env {
            Env::UnitCircle(_) => env.project(raw),
            Env::Obstacle(_) => raw,
        };
        let subdivisions = ((s.distance(&next) / (0.25 * cell)).ceil() as usize).max(1);
        for k in 1..=subdivisions {
            let t = k as f64 / subdivisions as f64;
            let mut p = State::new(s.x + t * (next.x - s.x), s.y + t * (next.y - s.y));
            if let Env::UnitCircle(_) = env {
                p = env.project(p);
            }
            if !inside_domain(env, &p) {
                return out;
            }
            let c = grid.cell_of(&p);
            if *out.last().unwrap() != c {
                out.push(c);
            }
        }
        s = next;
    }
    out
}

/// Seed cells: partition cells within `radius` rings of the critical set,
/// optionally together with the critical set.
pub fn seed_band(partition: &Region, critical: &Region, radius: usize, with_critical: bool) -> Region {
    let grid = *partition.grid();
    let mut band = critical.clone();
    let mut frontier: Vec<usize> = critical.cells().collect();
    for _ in 0..radius {
        let mut next = Vec::new();
        for c in frontier {
            for n in grid.neighborhood(c) {
                if partition.contains_cell(n) && band.insert(n) {
                    next.push(n);
                }
            }
        }
        frontier = next;
    }
    if !with_critical {
        for c in critical.cells() {
            band.remove(c);
        }
    }
    band
}

/// Extends `partition` by the cells its backward trajectories reach outside it.
///
/// `anchors` are the cells where the policy is trusted to act for this side;
/// they are clipped to the partition minus the critical set.
pub fn extend_region(
    env: &Env,
    policy: &Policy,
    partition: &Region,
    critical: &Region,
    anchors: &Region,
    cfg: &ExtensionConfig,
) -> Result<Extension, ExtendError> {
    cfg.validate()?;
    if !critical.is_subset_of(partition)? {
        return Err(ExtendError::InvalidConfig(
            "critical set must lie inside the partition".into(),
        ));
    }
    let sided = SidedPolicy::new(env, policy, anchors.intersection(&partition.difference(critical)?)?)?;
    let grid = *partition.grid();
    let seeds: Vec<usize> = seed_band(partition, critical, cfg.seed_radius, cfg.seed_critical).cells().collect();
    let visited: Vec<Vec<usize>> = seeds
        .par_iter()
        .map(|&c| backward_cells(env, &sided, grid.center(c), cfg))
        .collect();

    let mut added = Region::empty(grid);
    let mut first_seed = vec![None; grid.len()];
    for (&seed, cells) in seeds.iter().zip(&visited) {
        for &c in cells {
            if !partition.contains_cell(c) && added.insert(c) {
                first_seed[c] = Some(grid.center(seed));
            }
        }
    }
    let witnesses = added
        .cells()
        .map(|c| (c, first_seed[c].expect("every added cell has a seed")))
        .collect();
    Ok(Extension {
        extended: partition.union(&added)?,
        added,
        witnesses,
    })
}

/// Minimal thickness of the overlap of two extended regions, measured across
/// the critical set: angular length on the circle; smallest y-extent over the
/// box-grid columns that hold critical cells. Only overlap components that
/// contain a critical cell count. Returns 0 when they do not overlap there.
pub fn overlap_width(a: &Region, b: &Region, critical: &Region) -> Result<f64, ExtendError> {
    let inter = a.intersection(b)?;
    let grid = *inter.grid();
    let component = component_cells(&inter, critical);
    if component.is_empty() {
        return Ok(0.0);
    }
    let width = match grid {
        Grid::Angular { .. } => component.count() as f64 * grid.transversal_step(),
        Grid::Box { nx, ny, .. } => {
            let h = grid.transversal_step();
            (0..nx)
                .filter(|&ix| (0..ny).any(|iy| critical.contains_cell(grid.index(ix, iy))))
                .filter_map(|ix| {
                    let rows: Vec<usize> = (0..ny)
                        .filter(|&iy| component.contains_cell(grid.index(ix, iy)))
                        .collect();
                    Some((rows.last()? - rows.first()? + 1) as f64 * h)
                })
                .fold(f64::INFINITY, f64::min)
        }
    };
    Ok(width)
}

/// Cells of `region` connected to `anchor` cells.
fn component_cells(region: &Region, anchor: &Region) -> Region {
    let grid = *region.grid();
    let mut out = Region::empty(grid);
    let mut queue: VecDeque<usize> = anchor.cells().filter(|&c| region.contains_cell(c)).collect();
    for &c in &queue {
        out.insert(c);
    }
    while let Some(c) = queue.pop_front() {
        for n in grid.neighbors(c) {
            if region.contains_cell(n) && out.insert(n) {
                queue.push_back(n);
            }
        }
    }
    out
}

/// Checks coverage and the overlap requirement; returns the overlap width.
pub fn check_overlap(
    e0: &Region,
    e1: &Region,
    critical: &Region,
    cfg: &ExtensionConfig,
) -> Result<f64, ExtendError> {
    if !e0.union(e1)?.is_full() {
        return Err(ExtendError::CoverageViolation);
    }
    let width = overlap_width(e0, e1, critical)?;
    if width + 1e-9 < cfg.min_overlap {
        return Err(ExtendError::InsufficientOverlap {
            width,
            required: cfg.min_overlap,
        });
    }
    Ok(width)
}
