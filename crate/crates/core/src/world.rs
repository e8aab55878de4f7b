//! Grid world: tiling, per-cell state, task partition, targets and coverage
//! accounting.
//!
//! The robot-visible [`GridMap`] starts with every cell `Unexplored`. The
//! hidden [`GroundTruth`] layer is only consulted by the sensing oracle and by
//! the coverage-ratio metric.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("grid dimensions must be positive, got {width}x{height}")]
    EmptyGrid { width: usize, height: usize },
    #[error("cell side length must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("task {task} rectangle leaves the grid")]
    TaskOutOfGrid { task: u32 },
    #[error("task rectangles overlap at cell ({x}, {y})")]
    OverlappingTasks { x: usize, y: usize },
    #[error("cell ({x}, {y}) is not covered by any task")]
    UncoveredCell { x: usize, y: usize },
    #[error("obstacle at ({x}, {y}) lies outside the grid")]
    ObstacleOutOfGrid { x: usize, y: usize },
    #[error("target at ({x}, {y}) is outside the grid or on an obstacle")]
    TargetOnObstacle { x: usize, y: usize },
    #[error("start cell ({x}, {y}) is not free space")]
    StartNotFree { x: usize, y: usize },
    #[error("lambda list has {got} entries for {expected} tasks")]
    LambdaCount { got: usize, expected: usize },
    #[error("invalid lambda {0}")]
    BadLambda(f64),
    #[error("cell index {0} is outside the grid")]
    CellOutOfGrid(usize),
    #[error("cell ({x}, {y}) is {state:?} and cannot be covered")]
    NotCoverable { x: usize, y: usize, state: CellState },
}

/// Belief state of one ε-cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellState {
    Unexplored,
    Explored,
    Forbidden,
    Obstacle,
}

impl CellState {
    /// Merge precedence: Obstacle > Forbidden > Explored > Unexplored.
    pub fn precedence(self) -> u8 {
        match self {
            CellState::Unexplored => 0,
            CellState::Explored => 1,
            CellState::Forbidden => 2,
            CellState::Obstacle => 3,
        }
    }

    pub fn is_blocked(self) -> bool {
        matches!(self, CellState::Obstacle | CellState::Forbidden)
    }

    pub fn symbol(self) -> char {
        match self {
            CellState::Unexplored => '?',
            CellState::Explored => '.',
            CellState::Forbidden => 'x',
            CellState::Obstacle => '#',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellState::Unexplored => "unexplored",
            CellState::Explored => "explored",
            CellState::Forbidden => "forbidden",
            CellState::Obstacle => "obstacle",
        }
    }
}

impl fmt::Display for CellState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Task identifier in `1..=M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub u32);

impl TaskId {
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Axis-aligned cell rectangle, half-open: `[x, x + w) × [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x >= self.x && c.x < self.x + self.w && c.y >= self.y && c.y < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.y..self.y + self.h).flat_map(move |y| (self.x..self.x + self.w).map(move |x| Cell::new(x, y)))
    }

    /// Geometric centre in cell units.
    pub fn centroid(&self) -> (f64, f64) {
        (self.x as f64 + self.w as f64 / 2.0, self.y as f64 + self.h as f64 / 2.0)
    }
}

/// One task: a rectangular block of cells with a Poisson target prior.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRegion {
    pub id: TaskId,
    pub rect: Rect,
    pub lambda: f64,
    /// Targets discovered so far in this task.
    pub discovered: u32,
    /// Targets actually placed (hidden from decision making).
    pub placed: u32,
    pub unexplored: usize,
}

impl TaskRegion {
    pub fn centroid(&self) -> (f64, f64) {
        self.rect.centroid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub cell: Cell,
    pub task: TaskId,
    pub discovered: bool,
}

/// A single cell transition, as logged and exchanged between robots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellChange {
    pub cell: Cell,
    pub old: CellState,
    pub new: CellState,
}

/// Hidden occupancy layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    width: usize,
    height: usize,
    occupied: Vec<bool>,
    free: Vec<bool>,
}

impl GroundTruth {
    pub fn new(width: usize, height: usize, obstacles: &[Cell]) -> Self {
        let mut occupied = vec![false; width * height];
        for c in obstacles {
            occupied[c.y * width + c.x] = true;
        }
        let mut free = vec![true; width * height];
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                if occupied[i] {
                    free[i] = false;
                    for (nx, ny) in neighbors8(x, y, width, height) {
                        free[ny * width + nx] = false;
                    }
                }
            }
        }
        Self { width, height, occupied, free }
    }

    pub fn is_occupied(&self, c: Cell) -> bool {
        self.occupied[c.y * self.width + c.x]
    }

    /// Allowed cell: neither an obstacle nor inside the obstacle buffer.
    pub fn is_free(&self, c: Cell) -> bool {
        self.free[c.y * self.width + c.x]
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|f| **f).count()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// True when the free cells form one 4-connected component.
    pub fn free_space_connected(&self) -> bool {
        let Some(start) = self.free.iter().position(|f| *f) else {
            return true;
        };
        let mut seen = vec![false; self.free.len()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % self.width, i / self.width);
            for (nx, ny) in neighbors4(x, y, self.width, self.height) {
                let j = ny * self.width + nx;
                if self.free[j] && !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == self.free_count()
    }
}

/// Target placement requested by a scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    /// Per-task Poisson means; counts and positions sampled from the seed.
    Sampled { lambda: Vec<f64> },
    /// Explicit target cells with per-task means used for worth estimation.
    Explicit { lambda: Vec<f64>, cells: Vec<Cell> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub width: usize,
    pub height: usize,
    pub epsilon_m: f64,
    pub obstacles: Vec<Cell>,
    pub tasks: Vec<Rect>,
    pub targets: TargetSpec,
    /// Cells that must stay free (robot start cells).
    pub reserved: Vec<Cell>,
}

/// The robot-visible symbolic map plus task bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    epsilon: f64,
    cells: Vec<CellState>,
    task_of: Vec<TaskId>,
    tasks: Vec<TaskRegion>,
    targets: Vec<Target>,
    targets_at: BTreeMap<usize, Vec<usize>>,
}

/// A built world: the shared map and its hidden ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub map: GridMap,
    pub truth: GroundTruth,
}

pub(crate) fn neighbors4(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    // lexicographic (x, y) order
    let cand = [(x.wrapping_sub(1), y), (x, y.wrapping_sub(1)), (x, y + 1), (x + 1, y)];
    cand.into_iter().filter(move |(nx, ny)| *nx < w && *ny < h)
}

pub(crate) fn neighbors8(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1).flat_map(|dx| (-1i64..=1).map(move |dy| (dx, dy))).filter(|&(dx, dy)| dx != 0 || dy != 0).filter_map(
        move |(dx, dy)| {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then_some((nx as usize, ny as usize))
        },
    )
}

/// Builds the tiling, task partition and target layout.
pub fn build_world(spec: &WorldSpec, seed: u64) -> Result<World, WorldError> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(WorldError::EmptyGrid { width: w, height: h });
    }
    if spec.epsilon_m.is_nan() || spec.epsilon_m <= 0.0 {
        return Err(WorldError::BadEpsilon(spec.epsilon_m));
    }
    let mut task_of: Vec<Option<TaskId>> = vec![None; w * h];
    for (k, rect) in spec.tasks.iter().enumerate() {
        let id = TaskId(k as u32 + 1);
        if rect.is_empty() || rect.x + rect.w > w || rect.y + rect.h > h {
            return Err(WorldError::TaskOutOfGrid { task: id.0 });
        }
        for c in rect.cells() {
            let slot = &mut task_of[c.y * w + c.x];
            if slot.is_some() {
                return Err(WorldError::OverlappingTasks { x: c.x, y: c.y });
            }
            *slot = Some(id);
        }
    }
    let task_of: Vec<TaskId> = task_of
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.ok_or(WorldError::UncoveredCell { x: i % w, y: i / w }))
        .collect::<Result<_, _>>()?;

    for c in &spec.obstacles {
        if c.x >= w || c.y >= h {
            return Err(WorldError::ObstacleOutOfGrid { x: c.x, y: c.y });
        }
    }
    let truth = GroundTruth::new(w, h, &spec.obstacles);
    for c in &spec.reserved {
        if c.x >= w || c.y >= h || !truth.is_free(*c) {
            return Err(WorldError::StartNotFree { x: c.x, y: c.y });
        }
    }

    let lambda = match &spec.targets {
        TargetSpec::Sampled { lambda } | TargetSpec::Explicit { lambda, .. } => lambda,
    };
    if lambda.len() != spec.tasks.len() {
        return Err(WorldError::LambdaCount { got: lambda.len(), expected: spec.tasks.len() });
    }
    if let Some(bad) = lambda.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(WorldError::BadLambda(*bad));
    }

    let mut tasks: Vec<TaskRegion> = spec
        .tasks
        .iter()
        .zip(lambda)
        .enumerate()
        .map(|(k, (rect, &lambda))| TaskRegion {
            id: TaskId(k as u32 + 1),
            rect: *rect,
            lambda,
            discovered: 0,
            placed: 0,
            unexplored: rect.area(),
        })
        .collect();

    let mut targets = Vec::new();
    match &spec.targets {
        TargetSpec::Explicit { cells, .. } => {
            for c in cells {
                if c.x >= w || c.y >= h || !truth.is_free(*c) {
                    return Err(WorldError::TargetOnObstacle { x: c.x, y: c.y });
                }
                targets.push(Target { cell: *c, task: task_of[c.y * w + c.x], discovered: false });
            }
        }
        TargetSpec::Sampled { .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for task in &tasks {
                let free: Vec<Cell> = task.rect.cells().filter(|c| truth.is_free(*c)).collect();
                let count = if task.lambda > 0.0 && !free.is_empty() {
                    let poisson = Poisson::new(task.lambda).map_err(|_| WorldError::BadLambda(task.lambda))?;
                    poisson.sample(&mut rng) as usize
                } else {
                    0
                };
                for _ in 0..count {
                    let cell = *free.choose(&mut rng).expect("non-empty free set");
                    targets.push(Target { cell, task: task.id, discovered: false });
                }
            }
        }
    }
    let mut targets_at: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, t) in targets.iter().enumerate() {
        targets_at.entry(t.cell.y * w + t.cell.x).or_default().push(k);
        tasks[t.task.index()].placed += 1;
    }

    let map = GridMap {
        width: w,
        height: h,
        epsilon: spec.epsilon_m,
        cells: vec![CellState::Unexplored; w * h],
        task_of,
        tasks,
        targets,
        targets_at,
    };
    Ok(World { map, truth })
}

impl GridMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn in_grid(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn state(&self, c: Cell) -> CellState {
        self.cells[self.index(c)]
    }

    pub fn states(&self) -> &[CellState] {
        &self.cells
    }

    pub fn task_of(&self, c: Cell) -> TaskId {
        self.task_of[self.index(c)]
    }

    pub fn tasks(&self) -> &[TaskRegion] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> &TaskRegion {
        &self.tasks[id.index()]
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn targets_found(&self) -> usize {
        self.targets.iter().filter(|t| t.discovered).count()
    }

    /// Cell centre in metres.
    pub fn cell_center_m(&self, c: Cell) -> (f64, f64) {
        ((c.x as f64 + 0.5) * self.epsilon, (c.y as f64 + 0.5) * self.epsilon)
    }

    /// Cell containing a metric position, if inside the grid.
    pub fn cell_of_m(&self, x: f64, y: f64) -> Option<Cell> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let c = Cell::new((x / self.epsilon) as usize, (y / self.epsilon) as usize);
        self.in_grid(c).then_some(c)
    }

    pub fn task_centroid_m(&self, id: TaskId) -> (f64, f64) {
        let (cx, cy) = self.task(id).centroid();
        (cx * self.epsilon, cy * self.epsilon)
    }

    fn set_state(&mut self, i: usize, new: CellState) {
        let old = self.cells[i];
        if old == new {
            return;
        }
        if old == CellState::Unexplored {
            self.tasks[self.task_of[i].index()].unexplored -= 1;
        } else if new == CellState::Unexplored {
            self.tasks[self.task_of[i].index()].unexplored += 1;
        }
        self.cells[i] = new;
    }

    /// Applies range-sensor readings `(cell, occupied)` from the ground truth.
    ///
    /// Occupied cells become obstacles and their unexplored 8-neighbours
    /// become forbidden. Only unexplored cells change state.
    pub fn mark_sensed(&mut self, readings: impl IntoIterator<Item = (Cell, bool)>) -> Vec<CellChange> {
        let mut changes = Vec::new();
        for (cell, occupied) in readings {
            if !occupied || !self.in_grid(cell) {
                continue;
            }
            let i = self.index(cell);
            if self.cells[i] != CellState::Unexplored {
                continue;
            }
            self.set_state(i, CellState::Obstacle);
            changes.push(CellChange { cell, old: CellState::Unexplored, new: CellState::Obstacle });
            for (nx, ny) in neighbors8(cell.x, cell.y, self.width, self.height) {
                let j = ny * self.width + nx;
                if self.cells[j] == CellState::Unexplored {
                    self.set_state(j, CellState::Forbidden);
                    changes.push(CellChange {
                        cell: Cell::new(nx, ny),
                        old: CellState::Unexplored,
                        new: CellState::Forbidden,
                    });
                }
            }
        }
        changes
    }

    /// Marks a cell as covered and discovers any targets on it.
    pub fn mark_covered(&mut self, cell: Cell) -> Result<(Option<CellChange>, usize), WorldError> {
        if !self.in_grid(cell) {
            return Err(WorldError::CellOutOfGrid(cell.y.saturating_mul(self.width).saturating_add(cell.x)));
        }
        let i = self.index(cell);
        let state = self.cells[i];
        if state.is_blocked() {
            return Err(WorldError::NotCoverable { x: cell.x, y: cell.y, state });
        }
        let change = (state == CellState::Unexplored).then(|| {
            self.set_state(i, CellState::Explored);
            CellChange { cell, old: CellState::Unexplored, new: CellState::Explored }
        });
        let mut found = 0;
        if let Some(ids) = self.targets_at.get(&i) {
            for &k in ids {
                if !self.targets[k].discovered {
                    self.targets[k].discovered = true;
                    self.tasks[self.targets[k].task.index()].discovered += 1;
                    found += 1;
                }
            }
        }
        Ok((change, found))
    }

    /// Marks an unexplored cell as forbidden (e.g. found to be unreachable).
    pub fn mark_forbidden(&mut self, cell: Cell) -> Option<CellChange> {
        let i = self.index(cell);
        (self.cells[i] == CellState::Unexplored).then(|| {
            self.set_state(i, CellState::Forbidden);
            CellChange { cell, old: CellState::Unexplored, new: CellState::Forbidden }
        })
    }

    /// Applies remote changes; conflicting states resolve by precedence.
    pub fn merge_maps(&mut self, remote: &[CellChange]) -> Result<(), WorldError> {
        for ch in remote {
            if !self.in_grid(ch.cell) {
                return Err(WorldError::CellOutOfGrid(ch.cell.y.saturating_mul(self.width).saturating_add(ch.cell.x)));
            }
        }
        for ch in remote {
            let i = self.index(ch.cell);
            if ch.new.precedence() > self.cells[i].precedence() {
                self.set_state(i, ch.new);
            }
        }
        Ok(())
    }

    /// `n_U(r)`: unexplored cells of a task.
    pub fn unexplored_count(&self, task: TaskId) -> usize {
        self.tasks[task.index()].unexplored
    }

    pub fn total_unexplored(&self) -> usize {
        self.tasks.iter().map(|t| t.unexplored).sum()
    }

    pub fn unexplored_in(&self, rect: &Rect) -> usize {
        rect.cells().filter(|c| self.state(*c) == CellState::Unexplored).count()
    }

    /// Fraction of ground-truth free cells explored in this map.
    pub fn coverage_ratio(&self, truth: &GroundTruth) -> f64 {
        let mut free = 0usize;
        let mut explored = 0usize;
        for (i, s) in self.cells.iter().enumerate() {
            if truth.free[i] {
                free += 1;
                if *s == CellState::Explored {
                    explored += 1;
                }
            }
        }
        if free == 0 {
            1.0
        } else {
            explored as f64 / free as f64
        }
    }

    /// Same tiling and targets, all cells back to unexplored, nothing found.
    pub fn fresh_copy(&self) -> GridMap {
        let mut m = self.clone();
        m.cells.iter_mut().for_each(|s| *s = CellState::Unexplored);
        for t in &mut m.tasks {
            t.unexplored = t.rect.area();
            t.discovered = 0;
        }
        m.targets.iter_mut().for_each(|t| t.discovered = false);
        m
    }

    /// Forces a cell state directly; test and scenario setup helper.
    pub fn force_state(&mut self, cell: Cell, state: CellState) {
        let i = self.index(cell);
        self.set_state(i, state);
    }

    /// One character per cell, top row first, preceded by a `width height` header.
    pub fn render_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * (self.height + 1));
        out.push_str(&format!("{} {}\n", self.width, self.height));
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                out.push(self.state(Cell::new(x, y)).symbol());
            }
            out.push('\n');
        }
        out
    }
}

/// Splits a task rectangle into `n_max` near-equal strips along its longer
/// axis (vertical cuts when square). Strip sizes differ by at most one
/// row/column; earlier strips take the remainder.
pub fn partition_subregions(rect: &Rect, n_max: usize) -> Vec<Rect> {
    let n = n_max.max(1);
    if n > rect.area() {
        let mut subs: Vec<Rect> = rect.cells().map(|c| Rect::new(c.x, c.y, 1, 1)).collect();
        subs.resize(n, Rect::new(rect.x, rect.y, 0, 0));
        return subs;
    }
    let split_x = rect.w >= rect.h;
    let len = if split_x { rect.w } else { rect.h };
    let base = len / n;
    let extra = len % n;
    let mut offset = 0;
    (0..n)
        .map(|k| {
            let size = base + usize::from(k < extra);
            let r = if split_x {
                Rect::new(rect.x + offset, rect.y, size, rect.h)
            } else {
                Rect::new(rect.x, rect.y + offset, rect.w, size)
            };
            offset += size;
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_50() -> WorldSpec {
        let tasks = (0..2).flat_map(|row| (0..5).map(move |col| Rect::new(col * 10, row * 25, 10, 25))).collect();
        WorldSpec {
            width: 50,
            height: 50,
            epsilon_m: 1.0,
            obstacles: vec![],
            tasks,
            targets: TargetSpec::Sampled { lambda: vec![2.0; 10] },
            reserved: vec![],
        }
    }

    #[test]
    fn builds_standard_world() {
        let world = build_world(&spec_50(), 1).unwrap();
        assert_eq!(world.map.tasks().len(), 10);
        assert!(world.map.tasks().iter().all(|t| t.unexplored == 250));
        assert_eq!(world.map.unexplored_count(TaskId(1)), 250);
        assert!(world.map.states().iter().all(|s| *s == CellState::Unexplored));
    }

    #[test]
    fn minimal_world() {
        let spec = WorldSpec {
            width: 1,
            height: 1,
            epsilon_m: 1.0,
            obstacles: vec![],
            tasks: vec![Rect::new(0, 0, 1, 1)],
            targets: TargetSpec::Sampled { lambda: vec![0.0] },
            reserved: vec![],
        };
        let world = build_world(&spec, 0).unwrap();
        assert_eq!(world.map.len(), 1);
        assert!(world.map.targets().is_empty());
        assert_eq!(world.truth.free_count(), 1);
    }

    #[test]
    fn seeded_targets_are_reproducible() {
        let a = build_world(&spec_50(), 42).unwrap();
        let b = build_world(&spec_50(), 42).unwrap();
        assert_eq!(a.map.targets(), b.map.targets());
        let c = build_world(&spec_50(), 43).unwrap();
        assert_ne!(a.map.targets(), c.map.targets());
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = spec_50();
        s.tasks[1] = Rect::new(5, 0, 10, 25);
        assert!(matches!(build_world(&s, 0), Err(WorldError::OverlappingTasks { .. })));

        let mut s = spec_50();
        s.obstacles = vec![Cell::new(3, 3)];
        s.targets = TargetSpec::Explicit { lambda: vec![1.0; 10], cells: vec![Cell::new(3, 3)] };
        assert!(matches!(build_world(&s, 0), Err(WorldError::TargetOnObstacle { .. })));

        let mut s = spec_50();
        s.obstacles = vec![Cell::new(3, 3)];
        s.reserved = vec![Cell::new(3, 3)];
        assert!(matches!(build_world(&s, 0), Err(WorldError::StartNotFree { .. })));
    }

    #[test]
    fn sensed_obstacle_gets_buffer() {
        let mut world = build_world(&spec_50(), 0).unwrap();
        let ch = world.map.mark_sensed([(Cell::new(5, 5), true)]);
        assert_eq!(ch.len(), 9);
        assert_eq!(world.map.state(Cell::new(5, 5)), CellState::Obstacle);
        assert_eq!(world.map.state(Cell::new(4, 6)), CellState::Forbidden);
        // idempotent
        assert!(world.map.mark_sensed([(Cell::new(5, 5), true)]).is_empty());
    }

    #[test]
    fn sensing_free_explored_cell_is_noop() {
        let mut world = build_world(&spec_50(), 0).unwrap();
        world.map.mark_covered(Cell::new(2, 2)).unwrap();
        assert!(world.map.mark_sensed([(Cell::new(2, 2), false)]).is_empty());
        assert_eq!(world.map.state(Cell::new(2, 2)), CellState::Explored);
    }

    #[test]
    fn corner_obstacle_buffer_stays_in_grid() {
        let mut world = build_world(&spec_50(), 0).unwrap();
        let ch = world.map.mark_sensed([(Cell::new(0, 0), true)]);
        let mut forb: Vec<Cell> = ch.iter().filter(|c| c.new == CellState::Forbidden).map(|c| c.cell).collect();
        forb.sort();
        assert_eq!(forb, vec![Cell::new(0, 1), Cell::new(1, 0), Cell::new(1, 1)]);
    }

    #[test]
    fn explored_neighbour_is_not_forbidden() {
        let mut world = build_world(&spec_50(), 0).unwrap();
        world.map.mark_covered(Cell::new(6, 6)).unwrap();
        world.map.mark_sensed([(Cell::new(5, 5), true)]);
        assert_eq!(world.map.state(Cell::new(6, 6)), CellState::Explored);
    }

    #[test]
    fn covering_discovers_stacked_targets() {
        let mut s = spec_50();
        s.targets = TargetSpec::Explicit {
            lambda: vec![1.0; 10],
            cells: vec![Cell::new(1, 1), Cell::new(1, 1), Cell::new(7, 3)],
        };
        let mut world = build_world(&s, 0).unwrap();
        let (ch, found) = world.map.mark_covered(Cell::new(1, 1)).unwrap();
        assert!(ch.is_some());
        assert_eq!(found, 2);
        assert_eq!(world.map.task(TaskId(1)).discovered, 2);
        let (ch, found) = world.map.mark_covered(Cell::new(1, 1)).unwrap();
        assert!(ch.is_none());
        assert_eq!(found, 0);
        let (_, found) = world.map.mark_covered(Cell::new(7, 3)).unwrap();
        assert_eq!(found, 1);
    }

    #[test]
    fn covering_obstacle_is_an_error() {
        let mut world = build_world(&spec_50(), 0).unwrap();
        world.map.mark_sensed([(Cell::new(5, 5), true)]);
        assert!(matches!(world.map.mark_covered(Cell::new(5, 5)), Err(WorldError::NotCoverable { .. })));
        assert!(matches!(world.map.mark_covered(Cell::new(5, 6)), Err(WorldError::NotCoverable { .. })));
    }

    #[test]
    fn merge_resolves_by_precedence() {
        let world = build_world(&spec_50(), 0).unwrap();
        let c = Cell::new(8, 8);
        let a = [CellChange { cell: c, old: CellState::Unexplored, new: CellState::Explored }];
        let b = [CellChange { cell: c, old: CellState::Unexplored, new: CellState::Obstacle }];
        let mut m1 = world.map.clone();
        m1.merge_maps(&a).unwrap();
        m1.merge_maps(&b).unwrap();
        let mut m2 = world.map.clone();
        m2.merge_maps(&b).unwrap();
        m2.merge_maps(&a).unwrap();
        assert_eq!(m1.state(c), CellState::Obstacle);
        assert_eq!(m1, m2);
        let mut m3 = m1.clone();
        m3.merge_maps(&a).unwrap();
        assert_eq!(m1, m3);
    }

    #[test]
    fn merge_rejects_out_of_grid() {
        let mut world = build_world(&spec_50(), 0).unwrap();
        let bad = [CellChange { cell: Cell::new(50, 0), old: CellState::Unexplored, new: CellState::Explored }];
        assert!(world.map.merge_maps(&bad).is_err());
    }

    #[test]
    fn coverage_ratio_edges() {
        let mut world = build_world(&spec_50(), 0).unwrap();
        assert_eq!(world.map.coverage_ratio(&world.truth), 0.0);
        for i in 0..world.map.len() {
            let c = world.map.cell_at(i);
            world.map.mark_covered(c).unwrap();
        }
        assert_eq!(world.map.coverage_ratio(&world.truth), 1.0);
        let solid = WorldSpec {
            width: 1,
            height: 1,
            epsilon_m: 1.0,
            obstacles: vec![Cell::new(0, 0)],
            tasks: vec![Rect::new(0, 0, 1, 1)],
            targets: TargetSpec::Sampled { lambda: vec![0.0] },
            reserved: vec![],
        };
        let solid = build_world(&solid, 0).unwrap();
        assert_eq!(solid.map.coverage_ratio(&solid.truth), 1.0);
    }

    #[test]
    fn unexplored_count_tracks_changes() {
        let mut world = build_world(&spec_50(), 0).unwrap();
        let rect = world.map.task(TaskId(1)).rect;
        let cells: Vec<Cell> = rect.cells().collect();
        for c in &cells[..30] {
            world.map.force_state(*c, CellState::Forbidden);
        }
        for c in &cells[30..130] {
            world.map.mark_covered(*c).unwrap();
        }
        assert_eq!(world.map.unexplored_count(TaskId(1)), 120);
        assert_eq!(world.map.unexplored_in(&rect), 120);
    }

    #[test]
    fn partition_long_axis() {
        let task = Rect::new(0, 0, 10, 25);
        let subs = partition_subregions(&task, 4);
        let heights: Vec<usize> = subs.iter().map(|r| r.h).collect();
        assert_eq!(heights, vec![7, 6, 6, 6]);
        assert!(subs.iter().all(|r| r.w == 10));
        assert_eq!(partition_subregions(&task, 1), vec![task]);
        // square: vertical cuts
        let sq = partition_subregions(&Rect::new(0, 0, 4, 4), 2);
        assert_eq!(sq, vec![Rect::new(0, 0, 2, 4), Rect::new(2, 0, 2, 4)]);
    }

    #[test]
    fn partition_with_too_many_parts() {
        let subs = partition_subregions(&Rect::new(0, 0, 2, 1), 3);
        assert_eq!(subs.len(), 3);
        assert_eq!(subs[0], Rect::new(0, 0, 1, 1));
        assert_eq!(subs[1], Rect::new(1, 0, 1, 1));
        assert!(subs[2].is_empty());
    }
}
