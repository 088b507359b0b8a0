//! Grid-backed state-space regions.
//!
//! A [`Region`] is a set of cells of a [`Grid`]; membership of an arbitrary
//! state is decided by the cell containing it. Set algebra between regions on
//! the same grid is exact cell-wise.
//!
//! Text format (`*.region`):
//!
//! ```text
//! hysteresis-rl region v1
//! grid angular <cells>
//! grid box <nx> <ny> <x_min> <x_max> <y_min> <y_max>      (one of the two)
//! label <name>
//! rle <value>x<run> <value>x<run> ...
//! ```
//!
//! Box cells are numbered row by row (`index = iy * nx + ix`); angular cells
//! count counterclockwise from angle 0.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{Env, ObstacleEnv, Rect, State};
use crate::error::RegionError;

const HEADER: &str = "hysteresis-rl region v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Grid {
    /// `cells` equal arcs of the unit circle, cell `k` covering `[k w, (k + 1) w)`.
    Angular { cells: usize },
    Box {
        nx: usize,
        ny: usize,
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
}

impl Grid {
    pub fn angular(resolution: f64) -> Self {
        let cells = (TAU / resolution).round().max(4.0) as usize;
        Grid::Angular { cells }
    }

    pub fn boxed(rect: Rect, resolution: f64) -> Self {
        let nx = ((rect.x_max - rect.x_min) / resolution).round().max(1.0) as usize;
        let ny = ((rect.y_max - rect.y_min) / resolution).round().max(1.0) as usize;
        Grid::Box {
            nx,
            ny,
            x_min: rect.x_min,
            x_max: rect.x_max,
            y_min: rect.y_min,
            y_max: rect.y_max,
        }
    }

    pub fn for_env(env: &Env, resolution: f64) -> Self {
        match env {
            Env::UnitCircle(_) => Self::angular(resolution),
            Env::Obstacle(_) => Self::boxed(ObstacleEnv::STATE_BOX, resolution),
        }
    }

    pub fn len(&self) -> usize {
        match *self {
            Grid::Angular { cells } => cells,
            Grid::Box { nx, ny, .. } => nx * ny,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell size along the transversal coordinate (radians or `y` units).
    pub fn transversal_step(&self) -> f64 {
        match *self {
            Grid::Angular { cells } => TAU / cells as f64,
            Grid::Box { ny, y_min, y_max, .. } => (y_max - y_min) / ny as f64,
        }
    }

    pub fn x_step(&self) -> f64 {
        match *self {
            Grid::Angular { cells } => TAU / cells as f64,
            Grid::Box { nx, x_min, x_max, .. } => (x_max - x_min) / nx as f64,
        }
    }

    pub fn cell_of(&self, s: &State) -> usize {
        match *self {
            Grid::Angular { cells } => {
                let k = (s.angle() / (TAU / cells as f64)).floor() as usize;
                k.min(cells - 1)
            }
            Grid::Box {
                nx,
                ny,
                x_min,
                x_max,
                y_min,
                y_max,
            } => {
                let fx = ((s.x - x_min) / (x_max - x_min) * nx as f64).floor();
                let fy = ((s.y - y_min) / (y_max - y_min) * ny as f64).floor();
                let ix = (fx.max(0.0) as usize).min(nx - 1);
                let iy = (fy.max(0.0) as usize).min(ny - 1);
                iy * nx + ix
            }
        }
    }

    pub fn center(&self, cell: usize) -> State {
        match *self {
            Grid::Angular { cells } => State::on_circle((cell as f64 + 0.5) * TAU / cells as f64),
            Grid::Box {
                nx,
                ny,
                x_min,
                x_max,
                y_min,
                y_max,
            } => {
                let (ix, iy) = (cell % nx, cell / nx);
                State::new(
                    x_min + (ix as f64 + 0.5) * (x_max - x_min) / nx as f64,
                    y_min + (iy as f64 + 0.5) * (y_max - y_min) / ny as f64,
                )
            }
        }
    }

    /// `(column, row)` of a box cell; angular cells map to `(cell, 0)`.
    pub fn coords(&self, cell: usize) -> (usize, usize) {
        match *self {
            Grid::Angular { .. } => (cell, 0),
            Grid::Box { nx, .. } => (cell % nx, cell / nx),
        }
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        match *self {
            Grid::Angular { .. } => ix,
            Grid::Box { nx, .. } => iy * nx + ix,
        }
    }

    /// Edge-adjacent cells (wrapping around the circle).
    pub fn neighbors(&self, cell: usize) -> Vec<usize> {
        match *self {
            Grid::Angular { cells } => vec![(cell + cells - 1) % cells, (cell + 1) % cells],
            Grid::Box { nx, ny, .. } => {
                let (ix, iy) = (cell % nx, cell / nx);
                let mut out = Vec::with_capacity(4);
                if ix > 0 {
                    out.push(cell - 1);
                }
                if ix + 1 < nx {
                    out.push(cell + 1);
                }
                if iy > 0 {
                    out.push(cell - nx);
                }
                if iy + 1 < ny {
                    out.push(cell + nx);
                }
                out
            }
        }
    }

    /// Edge- and corner-adjacent cells.
    pub fn neighborhood(&self, cell: usize) -> Vec<usize> {
        match *self {
            Grid::Angular { .. } => self.neighbors(cell),
            Grid::Box { nx, ny, .. } => {
                let (ix, iy) = ((cell % nx) as isize, (cell / nx) as isize);
                let mut out = Vec::with_capacity(8);
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (x, y) = (ix + dx, iy + dy);
                        if x >= 0 && y >= 0 && (x as usize) < nx && (y as usize) < ny {
                            out.push(y as usize * nx + x as usize);
                        }
                    }
                }
                out
            }
        }
    }

    fn header_line(&self) -> String {
        match *self {
            Grid::Angular { cells } => format!("grid angular {cells}"),
            Grid::Box {
                nx,
                ny,
                x_min,
                x_max,
                y_min,
                y_max,
            } => format!("grid box {nx} {ny} {x_min} {x_max} {y_min} {y_max}"),
        }
    }

    fn parse_header(line: &str) -> Result<Self, RegionError> {
        let bad = || RegionError::Format(format!("bad grid line `{line}`"));
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["grid", "angular", n] => {
                let cells: usize = n.parse().map_err(|_| bad())?;
                if cells == 0 {
                    return Err(bad());
                }
                Ok(Grid::Angular { cells })
            }
            ["grid", "box", nx, ny, a, b, c, d] => {
                let nx: usize = nx.parse().map_err(|_| bad())?;
                let ny: usize = ny.parse().map_err(|_| bad())?;
                let f = |s: &str| s.parse::<f64>().map_err(|_| bad());
                let (x_min, x_max, y_min, y_max) = (f(a)?, f(b)?, f(c)?, f(d)?);
                if nx == 0 || ny == 0 || !(x_min < x_max) || !(y_min < y_max) {
                    return Err(bad());
                }
                Ok(Grid::Box {
                    nx,
                    ny,
                    x_min,
                    x_max,
                    y_min,
                    y_max,
                })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    grid: Grid,
    cells: Vec<bool>,
}

impl Region {
    pub fn empty(grid: Grid) -> Self {
        Self {
            grid,
            cells: vec![false; grid.len()],
        }
    }

    pub fn full(grid: Grid) -> Self {
        Self {
            grid,
            cells: vec![true; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize) -> bool) -> Self {
        Self {
            grid,
            cells: (0..grid.len()).map(&mut f).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn contains(&self, s: &State) -> bool {
        self.cells[self.grid.cell_of(s)]
    }

    pub fn contains_cell(&self, cell: usize) -> bool {
        self.cells[cell]
    }

    pub fn insert(&mut self, cell: usize) -> bool {
        !std::mem::replace(&mut self.cells[cell], true)
    }

    pub fn remove(&mut self, cell: usize) {
        self.cells[cell] = false;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    pub fn is_full(&self) -> bool {
        self.cells.iter().all(|&c| c)
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i)
    }

    fn zip_with(&self, other: &Region, op: impl Fn(bool, bool) -> bool) -> Result<Region, RegionError> {
        if self.grid != other.grid {
            return Err(RegionError::GridMismatch);
        }
        Ok(Region {
            grid: self.grid,
            cells: self.cells.iter().zip(&other.cells).map(|(&a, &b)| op(a, b)).collect(),
        })
    }

    pub fn union(&self, other: &Region) -> Result<Region, RegionError> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Region) -> Result<Region, RegionError> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Region) -> Result<Region, RegionError> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> Region {
        Region {
            grid: self.grid,
            cells: self.cells.iter().map(|c| !c).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Region) -> Result<bool, RegionError> {
        Ok(self.difference(other)?.is_empty())
    }

    /// Cells of the region adjacent (edge or corner) to a cell outside it.
    pub fn boundary_cells(&self) -> Region {
        Region::from_fn(self.grid, |c| {
            self.cells[c] && self.grid.neighborhood(c).iter().any(|&n| !self.cells[n])
        })
    }

    /// Number of edge-connected components.
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.cells.len()];
        let mut count = 0;
        for start in 0..self.cells.len() {
            if !self.cells[start] || seen[start] {
                continue;
            }
            count += 1;
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(c) = queue.pop_front() {
                for n in self.grid.neighbors(c) {
                    if self.cells[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        count
    }

    /// Maximal runs of an angular region as `(start, end)` angles in radians.
    /// A run crossing angle 0 is reported with `start > end`.
    pub fn angular_intervals(&self) -> Vec<(f64, f64)> {
        let Grid::Angular { cells } = self.grid else {
            return Vec::new();
        };
        let w = TAU / cells as f64;
        // a run ending at cell 0 ends at 2π, not at 0
        let edge = |c: usize| if c == 0 { TAU } else { c as f64 * w };
        if self.is_full() {
            return vec![(0.0, TAU)];
        }
        // begin scanning just after an excluded cell so runs are not split at 0
        let first_out = self.cells.iter().position(|&c| !c).unwrap_or(0);
        let mut out = Vec::new();
        let mut run_start = None;
        for k in 1..=cells {
            let c = (first_out + k) % cells;
            match (self.cells[c], run_start) {
                (true, None) => run_start = Some(c),
                (false, Some(s)) => {
                    out.push((s as f64 * w, edge(c)));
                    run_start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = run_start {
            out.push((s as f64 * w, edge((first_out + cells) % cells)));
        }
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        out
    }

    /// Human-readable summary (interval notation on the circle).
    pub fn summary(&self) -> String {
        match self.grid {
            Grid::Angular { .. } => {
                let parts: Vec<String> = self
                    .angular_intervals()
                    .iter()
                    .map(|&(a, b)| {
                        if b <= a {
                            format!("[{:.3}π, 2π) ∪ [0, {:.3}π]", a / PI, b / PI)
                        } else if b >= TAU {
                            format!("[{:.3}π, 2π)", a / PI)
                        } else {
                            format!("[{:.3}π, {:.3}π]", a / PI, b / PI)
                        }
                    })
                    .collect();
                if parts.is_empty() {
                    "∅".to_string()
                } else {
                    parts.join(" ∪ ")
                }
            }
            Grid::Box { .. } => {
                if self.is_empty() {
                    return "∅".to_string();
                }
                let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
                for c in self.cells() {
                    let s = self.grid.center(c);
                    x0 = x0.min(s.x);
                    x1 = x1.max(s.x);
                    y0 = y0.min(s.y);
                    y1 = y1.max(s.y);
                }
                let hx = self.grid.x_step() / 2.0;
                let hy = self.grid.transversal_step() / 2.0;
                format!(
                    "{} of {} cells, bounding box x ∈ [{:.3}, {:.3}], y ∈ [{:.3}, {:.3}]",
                    self.count(),
                    self.grid.len(),
                    x0 - hx,
                    x1 + hx,
                    y0 - hy,
                    y1 + hy
                )
            }
        }
    }

    pub fn to_text(&self, label: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "{}", self.grid.header_line());
        let _ = writeln!(out, "label {label}");
        out.push_str("rle");
        let mut i = 0;
        while i < self.cells.len() {
            let v = self.cells[i];
            let run = self.cells[i..].iter().take_while(|&&c| c == v).count();
            let _ = write!(out, " {}x{}", u8::from(v), run);
            i += run;
        }
        out.push('\n');
        out
    }

    /// Parses the text format, returning the region and its label.
    pub fn from_text(text: &str) -> Result<(Region, String), RegionError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let fmt = |m: &str| RegionError::Format(m.to_string());
        if lines.next().map(str::trim) != Some(HEADER) {
            return Err(fmt("missing header"));
        }
        let grid = Grid::parse_header(lines.next().ok_or_else(|| fmt("missing grid line"))?)?;
        let label = lines
            .next()
            .and_then(|l| l.strip_prefix("label "))
            .ok_or_else(|| fmt("missing label line"))?
            .trim()
            .to_string();
        let rle = lines
            .next()
            .and_then(|l| l.strip_prefix("rle"))
            .ok_or_else(|| fmt("missing rle line"))?;
        if lines.next().is_some() {
            return Err(fmt("trailing content"));
        }
        let mut cells = Vec::with_capacity(grid.len());
        for tok in rle.split_whitespace() {
            let (v, n) = tok.split_once('x').ok_or_else(|| fmt("bad run token"))?;
            let v = match v {
                "0" => false,
                "1" => true,
                _ => return Err(fmt("run value must be 0 or 1")),
            };
            let n: usize = n.parse().map_err(|_| fmt("bad run length"))?;
            cells.extend(std::iter::repeat(v).take(n));
        }
        if cells.len() != grid.len() {
            return Err(RegionError::Format(format!(
                "rle covers {} cells, grid has {}",
                cells.len(),
                grid.len()
            )));
        }
        Ok((Region { grid, cells }, label))
    }

    pub fn save(&self, path: &Path, label: &str) -> Result<(), RegionError> {
        std::fs::write(path, self.to_text(label))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Region, String), RegionError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
