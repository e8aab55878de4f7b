//! In-region coverage waypoints (boustrophedon with a nearest-frontier
//! fallback) and shortest 4-connected travel paths.

use std::collections::VecDeque;

use thiserror::Error;

use crate::world::{neighbors4, Cell, CellState, GridMap, Rect};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("no path from {from} to {to} in the current map")]
    NoPath { from: Cell, to: Cell },
}

/// Next coverage target for a robot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Waypoint {
    Cover(Cell),
    /// No reachable unexplored cell is left; `unreachable` lists the
    /// unexplored region cells that could not be reached.
    Done {
        unreachable: Vec<Cell>,
    },
}

/// Sweep bookkeeping carried between calls.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannerState {
    pub region: Rect,
    /// `+1` sweeps north (increasing y), `-1` south.
    pub sweep_dir: i64,
    /// Column step taken at the end of a lane.
    pub lane_step: i64,
    /// Transit cells still to walk before the next cover step.
    pub path: VecDeque<Cell>,
}

impl PlannerState {
    pub fn new(region: Rect) -> Self {
        Self { region, sweep_dir: 1, lane_step: 1, path: VecDeque::new() }
    }
}

fn offset(c: Cell, dx: i64, dy: i64, map: &GridMap) -> Option<Cell> {
    let x = c.x as i64 + dx;
    let y = c.y as i64 + dy;
    if x < 0 || y < 0 {
        return None;
    }
    let n = Cell::new(x as usize, y as usize);
    map.in_grid(n).then_some(n)
}

fn is_target(map: &GridMap, region: &Rect, c: Cell) -> bool {
    region.contains(c) && map.state(c) == CellState::Unexplored
}

/// Picks the next cell to cover inside `state.region`.
pub fn next_waypoint(map: &GridMap, state: &mut PlannerState, pose: Cell) -> Waypoint {
    let region = state.region;
    if is_target(map, &region, pose) {
        return Waypoint::Cover(pose);
    }
    if region.contains(pose) {
        if let Some(c) = offset(pose, 0, state.sweep_dir, map).filter(|c| is_target(map, &region, *c)) {
            return Waypoint::Cover(c);
        }
        // end of lane: step sideways and reverse
        for step in [state.lane_step, -state.lane_step] {
            if let Some(c) = offset(pose, step, 0, map).filter(|c| is_target(map, &region, *c)) {
                state.lane_step = step;
                state.sweep_dir = -state.sweep_dir;
                return Waypoint::Cover(c);
            }
        }
    }
    match nearest_frontier(map, &region, pose) {
        Some(c) => {
            // start the new lane heading into the longer remaining stretch
            let north = region.y + region.h - 1 - c.y;
            let south = c.y - region.y;
            state.sweep_dir = if north >= south { 1 } else { -1 };
            Waypoint::Cover(c)
        }
        None => {
            Waypoint::Done { unreachable: region.cells().filter(|c| map.state(*c) == CellState::Unexplored).collect() }
        }
    }
}

/// BFS over non-blocked cells; among the closest unexplored region cells the
/// lowest cell index wins.
fn nearest_frontier(map: &GridMap, region: &Rect, pose: Cell) -> Option<Cell> {
    let mut dist = vec![usize::MAX; map.len()];
    let mut queue = VecDeque::new();
    dist[map.index(pose)] = 0;
    queue.push_back(pose);
    let mut best: Option<(usize, usize)> = None;
    while let Some(c) = queue.pop_front() {
        let d = dist[map.index(c)];
        if let Some((bd, _)) = best {
            if d > bd {
                break;
            }
        }
        if is_target(map, region, c) {
            let i = map.index(c);
            if best.is_none_or(|(_, bi)| i < bi) {
                best = Some((d, i));
            }
            continue;
        }
        for (nx, ny) in neighbors4(c.x, c.y, map.width(), map.height()) {
            let n = Cell::new(nx, ny);
            let j = map.index(n);
            if dist[j] == usize::MAX && !map.state(n).is_blocked() {
                dist[j] = d + 1;
                queue.push_back(n);
            }
        }
    }
    best.map(|(_, i)| map.cell_at(i))
}

/// Shortest 4-connected path from `from` to `to`, excluding `from`.
/// Unknown cells count as traversable; neighbours expand in `(x, y)` order.
pub fn plan_travel(map: &GridMap, from: Cell, to: Cell) -> Result<Vec<Cell>, PlanError> {
    if from == to {
        return Ok(Vec::new());
    }
    if !map.in_grid(to) || map.state(to).is_blocked() {
        return Err(PlanError::NoPath { from, to });
    }
    let mut prev = vec![usize::MAX; map.len()];
    let start = map.index(from);
    let goal = map.index(to);
    prev[start] = start;
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        if map.index(c) == goal {
            break;
        }
        for (nx, ny) in neighbors4(c.x, c.y, map.width(), map.height()) {
            let n = Cell::new(nx, ny);
            let j = map.index(n);
            if prev[j] == usize::MAX && !map.state(n).is_blocked() {
                prev[j] = map.index(c);
                queue.push_back(n);
            }
        }
    }
    if prev[goal] == usize::MAX {
        return Err(PlanError::NoPath { from, to });
    }
    let mut path = Vec::new();
    let mut i = goal;
    while i != start {
        path.push(map.cell_at(i));
        i = prev[i];
    }
    path.reverse();
    Ok(path)
}
