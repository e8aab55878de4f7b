use serde::{Deserialize, Serialize};
use std::fmt;

use crate::models::BatteryParams;
use crate::planner::PlannerState;
use crate::supervisor::DesState;
use crate::world::{Cell, CellChange, GridMap, Rect, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Tasking,
    Traveling,
    Idle,
    Failed,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Tasking => "tasking",
            Mode::Traveling => "traveling",
            Mode::Idle => "idle",
            Mode::Failed => "failed",
        })
    }
}

/// A motion or covering step in progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Step {
    Travel(Cell),
    Cover(Cell),
}

#[derive(Debug, Clone)]
pub(crate) struct Robot {
    /// Scenario id.
    pub id: usize,
    pub cell: Cell,
    pub des: DesState,
    /// Current task `r_c`.
    pub task: Option<TaskId>,
    pub planner: Option<PlannerState>,
    /// Cell the robot is heading to cover.
    pub target: Option<Cell>,
    /// Step under way and the time it completes.
    pub step: Option<(Step, f64)>,
    /// Assignment taken up once the current region is finished.
    pub pending: Option<(TaskId, Rect)>,
    /// Task this idle robot is held in reserve for.
    pub standby: Option<TaskId>,
    pub battery: BatteryParams,
    /// Accumulated tasking time `t_k`.
    pub tasking_time: f64,
    pub alive: bool,
    /// Simulated time this robot has advanced to.
    pub clock: f64,
    pub last_work: f64,
    pub belief: GridMap,
    pub outbox: Vec<CellChange>,
    pub region_done: bool,
}

impl Robot {
    pub fn region(&self) -> Option<Rect> {
        self.planner.as_ref().map(|p| p.region)
    }

    pub fn mode(&self) -> Mode {
        if !self.alive {
            return Mode::Failed;
        }
        match (self.des, self.region()) {
            (DesState::WK, Some(r)) if r.contains(self.cell) => Mode::Tasking,
            (DesState::WK, Some(_)) => Mode::Traveling,
            _ => Mode::Idle,
        }
    }

    pub fn assign(&mut self, task: TaskId, region: Rect) {
        self.task = Some(task);
        self.planner = Some(PlannerState::new(region));
        self.target = None;
        self.step = None;
        self.standby = None;
        self.region_done = false;
    }

    pub fn unassign(&mut self) {
        self.task = None;
        self.planner = None;
        self.target = None;
        self.step = None;
        self.region_done = false;
    }
}
