//! Discrete-time simulation: motion, sensing, covering, map sync, failures,
//! strategy dispatch and metric accounting.

mod metrics;
mod robot;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{reliability_summary, time_of_discovery, Metrics, TOTD_STEPS};
pub use robot::Mode;
use robot::{Robot, Step};

use crate::game::{gain_of_players, gain_of_team, max_logit, team_potential, LogitParams};
use crate::models::{reliability, BatteryParams};
use crate::planner::{next_waypoint, plan_travel, Waypoint};
use crate::scenario::{BatteryConfig, ScenarioConfig, ScenarioError, Strategy};
use crate::supervisor::{
    build_noidling_game, build_resilience_game, detect_failures, nearest_neighbors, post_game_assign, step, BuiltGame,
    DesEvent, DesState, EventRecord, GameKind, GameParams, HeartbeatTable, Incoming, Occupant, Payload, Placement,
    RobotView, TaskView, TeamSnapshot,
};
use crate::world::{
    build_world, partition_subregions, Cell, CellChange, CellState, GridMap, GroundTruth, Rect, TaskId, WorldError,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Independent random streams derived from the scenario seed.
const STREAM_BATTERY: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_GAMES: u64 = 3;

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Dump the map every this many ticks.
    pub snapshot_every: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub id: usize,
    pub kind: GameKind,
    pub tick: u64,
    pub players: Vec<usize>,
    pub actions: Vec<TaskId>,
    pub phi_init: f64,
    pub phi_star: f64,
    pub g_p: f64,
    pub team_init: f64,
    pub team_star: f64,
    pub g_t: f64,
    /// Robot and the task it was allocated (players only).
    pub assigned: Vec<(usize, TaskId)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub tick: u64,
    pub robot: usize,
    pub x_m: f64,
    pub y_m: f64,
    pub cell: Cell,
    pub mode: Mode,
    pub state: DesState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeRow {
    pub tick: u64,
    pub change: CellChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub tick: u64,
    pub robot: usize,
    pub voters: Vec<usize>,
    pub suspecting: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureMark {
    pub robot: usize,
    pub tick: u64,
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub events: Vec<EventRecord>,
    pub games: Vec<GameRecord>,
    pub trajectories: Vec<TrajectoryRow>,
    pub changes: Vec<ChangeRow>,
    pub detections: Vec<DetectionRow>,
    pub failures: Vec<FailureMark>,
    /// Ground-truth coverage map at the end of the run.
    pub final_map: GridMap,
    pub truth: GroundTruth,
    pub snapshots: Vec<(u64, String)>,
    pub robot_ids: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Trigger {
    NoIdling(usize),
    Resilience(usize),
}

/// What a game decided for one player.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Plan {
    Stay,
    Pending(TaskId),
    Move(TaskId),
}

fn overlaps(a: &Rect, b: &Rect) -> bool {
    a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h && b.y < a.y + a.h
}

fn centre_distance(pos: Cell, r: &Rect) -> f64 {
    let (cx, cy) = r.centroid();
    (pos.x as f64 + 0.5 - cx).hypot(pos.y as f64 + 0.5 - cy)
}

struct Sim {
    strategy: Strategy,
    dt: f64,
    u: f64,
    omega: f64,
    eps: f64,
    n_max: usize,
    params: GameParams,
    sync_every: u64,
    heartbeat_every: u64,
    sigma: f64,
    physical: GridMap,
    truth: GroundTruth,
    robots: Vec<Robot>,
    heartbeat: Vec<HeartbeatTable>,
    beats: Vec<(usize, f64)>,
    confirmed: BTreeSet<usize>,
    schedule: Vec<(usize, f64, bool)>,
    queue: VecDeque<Trigger>,
    noise_rng: ChaCha8Rng,
    game_rng: ChaCha8Rng,
    sense_offsets: Vec<(i64, i64)>,
    tick: u64,
    events: Vec<EventRecord>,
    games: Vec<GameRecord>,
    trajectories: Vec<TrajectoryRow>,
    changes: Vec<ChangeRow>,
    detections: Vec<DetectionRow>,
    failures: Vec<FailureMark>,
    discoveries: Vec<f64>,
    snapshots: Vec<(u64, String)>,
    options: RunOptions,
}

/// Runs a scenario to completion with default options.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, EngineError> {
    run_with(cfg, &RunOptions::default())
}

pub fn run_with(cfg: &ScenarioConfig, options: &RunOptions) -> Result<RunOutput, EngineError> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg, options.clone())?;
    Ok(sim.run())
}

impl Sim {
    fn new(cfg: &ScenarioConfig, options: RunOptions) -> Result<Self, EngineError> {
        let world = build_world(&cfg.world_spec(), cfg.seed)?;
        let p = &cfg.params;
        let mut battery_rng = stream(cfg.seed, STREAM_BATTERY);
        let rho0 = Normal::<f64>::new(3.0e-3, 7.5e-5).expect("valid normal");
        let rho1 = Normal::<f64>::new(1400.0, 35.0).expect("valid normal");
        let n = cfg.robots.len();
        let robots: Vec<Robot> = cfg
            .robots
            .iter()
            .map(|rc| {
                let battery = match rc.battery {
                    BatteryConfig::Fixed(b) => b,
                    BatteryConfig::Keyword(_) => BatteryParams {
                        rho0: rho0.sample(&mut battery_rng).max(1e-6),
                        rho1: rho1.sample(&mut battery_rng).max(1.0),
                    },
                };
                Robot {
                    id: rc.id,
                    cell: Cell::new(rc.start[0], rc.start[1]),
                    des: DesState::ST,
                    task: None,
                    planner: None,
                    target: None,
                    step: None,
                    pending: None,
                    standby: None,
                    battery,
                    tasking_time: 0.0,
                    alive: true,
                    clock: 0.0,
                    last_work: 0.0,
                    belief: world.map.clone(),
                    outbox: Vec::new(),
                    region_done: false,
                }
            })
            .collect();
        let eps = world.map.epsilon();
        let reach = (p.sensing_radius_m / eps).ceil() as i64;
        let mut sense_offsets = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                if ((dx * dx + dy * dy) as f64) * eps * eps <= p.sensing_radius_m * p.sensing_radius_m {
                    sense_offsets.push((dx, dy));
                }
            }
        }
        let id_index: BTreeMap<usize, usize> = cfg.robots.iter().enumerate().map(|(k, r)| (r.id, k)).collect();
        let schedule = cfg.failures.iter().map(|f| (id_index[&f.robot], f.time_s, false)).collect();
        let ticks_of = |s: f64| ((s / p.tick_s).round() as u64).max(1);
        Ok(Self {
            strategy: cfg.strategy,
            dt: p.tick_s,
            u: p.u,
            omega: p.omega,
            eps,
            n_max: p.n_max,
            params: GameParams {
                travel_speed: p.u,
                tasking_speed: p.omega,
                eta: p.eta,
                gamma: p.gamma,
                kappa1: p.kappa1,
                kappa2: p.kappa2,
                logit: LogitParams { cycles: p.cycles, tau: p.tau },
            },
            sync_every: ticks_of(p.sync_every_s),
            heartbeat_every: ticks_of(p.heartbeat_s),
            sigma: p.noise_sigma_m,
            physical: world.map,
            truth: world.truth,
            robots,
            heartbeat: (0..n).map(|_| HeartbeatTable::new(n, p.heartbeat_s, p.t0_s, 0.0)).collect(),
            beats: Vec::new(),
            confirmed: BTreeSet::new(),
            schedule,
            queue: VecDeque::new(),
            noise_rng: stream(cfg.seed, STREAM_NOISE),
            game_rng: stream(cfg.seed, STREAM_GAMES),
            sense_offsets,
            tick: 0,
            events: Vec::new(),
            games: Vec::new(),
            trajectories: Vec::new(),
            changes: Vec::new(),
            detections: Vec::new(),
            failures: Vec::new(),
            discoveries: Vec::new(),
            snapshots: Vec::new(),
            options,
        })
    }

    fn event(&mut self, i: usize, event: DesEvent, payload: Payload) {
        let from = self.robots[i].des;
        match step(from, event) {
            Ok(to) => {
                self.robots[i].des = to;
                self.events.push(EventRecord { tick: self.tick, robot: self.robots[i].id, event, from, to, payload });
            }
            Err(e) => warn!("robot {}: {e}", self.robots[i].id),
        }
    }

    fn payload_robot(&self, i: usize) -> Payload {
        Payload::FailedRobot(self.robots[i].id)
    }

    fn tick_bound(&self) -> u64 {
        let free = self.truth.free_count().max(1) as f64;
        (10.0 * free / self.omega / self.dt).ceil() as u64
    }

    fn run(&mut self) -> RunOutput {
        self.start();
        let bound = self.tick_bound();
        let mut violation = false;
        loop {
            let finished = self.step_tick();
            if finished {
                break;
            }
            self.tick += 1;
            if self.tick >= bound {
                warn!("tick bound {bound} reached without termination");
                violation = true;
                break;
            }
        }
        self.finish(violation)
    }

    fn start(&mut self) {
        let mut groups: BTreeMap<TaskId, Vec<usize>> = BTreeMap::new();
        for i in 0..self.robots.len() {
            let r = self.physical.task_of(self.robots[i].cell);
            groups.entry(r).or_default().push(i);
        }
        for (r, members) in groups {
            if let [i] = members[..] {
                let rect = self.physical.task(r).rect;
                self.robots[i].assign(r, rect);
            } else {
                let incoming: Vec<Incoming> =
                    members.iter().map(|&i| Incoming { id: i, pos: self.robots[i].cell, prob: 1.0 }).collect();
                for (i, place) in post_game_assign(&self.physical, r, self.n_max, &[], &incoming) {
                    match place {
                        Placement::Region(rect) => self.robots[i].assign(r, rect),
                        Placement::Standby => {
                            // no free strip: look for one after start-up
                            self.robots[i].task = Some(r);
                            self.robots[i].region_done = true;
                        }
                    }
                }
            }
        }
        for i in 0..self.robots.len() {
            let r = self.robots[i].task;
            self.event(i, DesEvent::E0, r.map_or(Payload::None, Payload::Task));
            self.sense(i);
        }
    }

    /// One tick; returns true when the run is over.
    fn step_tick(&mut self) -> bool {
        let t0 = self.tick as f64 * self.dt;
        let t1 = t0 + self.dt;
        self.deliver(t0);
        self.apply_failures(t1);
        self.detect(t0);
        for i in 0..self.robots.len() {
            self.advance(i, t0, t1);
        }
        if self.tick.is_multiple_of(self.sync_every) {
            self.sync_maps();
        }
        self.handle_completions();
        let retriggered = self.retrigger();
        self.resolve_games();
        self.stop_covered();
        self.record_tick();
        if self.tick.is_multiple_of(self.heartbeat_every) {
            for (i, r) in self.robots.iter().enumerate() {
                if r.alive {
                    self.beats.push((i, t0));
                }
            }
        }
        let live: Vec<&Robot> = self.robots.iter().filter(|r| r.alive).collect();
        if live.iter().all(|r| r.des.is_terminal()) {
            return true;
        }
        let settled = live.iter().all(|r| matches!(r.des, DesState::ID | DesState::SP));
        // a failure nobody has confirmed yet may still hand out work
        let unconfirmed = (0..self.robots.len()).any(|j| !self.robots[j].alive && !self.confirmed.contains(&j));
        settled && !unconfirmed && self.queue.is_empty() && !retriggered
    }

    fn deliver(&mut self, now: f64) {
        for (sender, at) in std::mem::take(&mut self.beats) {
            for (j, table) in self.heartbeat.iter_mut().enumerate() {
                if self.robots[j].alive {
                    table.record(sender, at);
                }
            }
        }
        debug!("tick {}: heartbeats delivered at t = {now}", self.tick);
    }

    /// Delivers every outbox to every other live robot.
    fn sync_maps(&mut self) {
        let outboxes: Vec<Vec<CellChange>> = self.robots.iter_mut().map(|r| std::mem::take(&mut r.outbox)).collect();
        if outboxes.iter().all(Vec::is_empty) {
            return;
        }
        for (j, robot) in self.robots.iter_mut().enumerate() {
            if !robot.alive {
                continue;
            }
            for (i, changes) in outboxes.iter().enumerate() {
                if i != j && !changes.is_empty() {
                    robot.belief.merge_maps(changes).expect("changes come from the same grid");
                }
            }
        }
    }

    fn apply_failures(&mut self, t1: f64) {
        for k in 0..self.schedule.len() {
            let (i, at, done) = self.schedule[k];
            if done || at >= t1 {
                continue;
            }
            self.schedule[k].2 = true;
            if !self.robots[i].alive {
                continue;
            }
            info!("robot {} fails at t = {at}", self.robots[i].id);
            self.robots[i].alive = false;
            self.event(i, DesEvent::E7, Payload::None);
            self.failures.push(FailureMark { robot: self.robots[i].id, tick: self.tick, cell: self.robots[i].cell });
        }
    }

    fn detect(&mut self, now: f64) {
        let n = self.robots.len();
        let mut votes = BTreeMap::new();
        let mut voters_of = BTreeMap::new();
        for v in 0..n {
            if self.confirmed.contains(&v) {
                continue;
            }
            let centre = self.physical.cell_center_m(self.robots[v].cell);
            let candidates: Vec<(usize, (f64, f64))> = (0..n)
                .filter(|&w| w != v && !self.confirmed.contains(&w))
                .map(|w| (w, self.physical.cell_center_m(self.robots[w].cell)))
                .collect();
            let voters = nearest_neighbors(centre, candidates, self.params.kappa2);
            let flags: Vec<bool> =
                voters.iter().map(|&w| self.robots[w].alive && self.heartbeat[w].suspects(v, now)).collect();
            votes.insert(v, flags);
            voters_of.insert(v, voters);
        }
        for v in detect_failures(&votes, &mut self.confirmed) {
            let voters = voters_of[&v].iter().map(|&w| self.robots[w].id).collect();
            let suspecting = votes[&v].iter().filter(|f| **f).count();
            info!("tick {}: failure of robot {} confirmed", self.tick, self.robots[v].id);
            self.detections.push(DetectionRow { tick: self.tick, robot: self.robots[v].id, voters, suspecting });
            if self.strategy == Strategy::Care {
                self.queue.push_back(Trigger::Resilience(v));
            }
        }
    }

    fn sense(&mut self, i: usize) {
        let c = self.robots[i].cell;
        let (w, h) = (self.physical.width() as i64, self.physical.height() as i64);
        let readings: Vec<(Cell, bool)> = self
            .sense_offsets
            .iter()
            .filter_map(|&(dx, dy)| {
                let (x, y) = (c.x as i64 + dx, c.y as i64 + dy);
                (x >= 0 && y >= 0 && x < w && y < h).then(|| Cell::new(x as usize, y as usize))
            })
            .filter(|n| self.truth.is_occupied(*n))
            .map(|n| (n, true))
            .collect();
        if readings.is_empty() {
            return;
        }
        for change in self.physical.mark_sensed(readings.iter().copied()) {
            self.changes.push(ChangeRow { tick: self.tick, change });
        }
        let robot = &mut self.robots[i];
        let local = robot.belief.mark_sensed(readings);
        robot.outbox.extend(local);
    }

    /// Moves and covers until the tick's time budget runs out. A step
    /// takes effect when it completes; one that ends past `t1` carries over.
    fn advance(&mut self, i: usize, t0: f64, t1: f64) {
        const SLACK: f64 = 1e-9;
        let travel_cost = self.eps / self.u;
        let cover_cost = 1.0 / self.omega;
        let robot = &mut self.robots[i];
        if !robot.alive {
            return;
        }
        robot.clock = robot.clock.max(t0);
        if robot.des != DesState::WK || robot.planner.is_none() {
            robot.step = None;
            robot.clock = t1;
            return;
        }
        loop {
            let robot = &mut self.robots[i];
            if let Some((step, finish)) = robot.step {
                if finish > t1 + SLACK {
                    return;
                }
                robot.step = None;
                robot.clock = finish;
                robot.last_work = finish;
                match step {
                    Step::Travel(next) => robot.cell = next,
                    Step::Cover(c) => {
                        robot.cell = c;
                        robot.tasking_time += cover_cost;
                        self.cover(i, c, finish);
                    }
                }
                self.sense(i);
                continue;
            }
            if robot.region_done || robot.clock >= t1 - SLACK {
                return;
            }
            let pose = robot.cell;
            let planner = robot.planner.as_mut().expect("checked above");
            let target = match robot.target {
                Some(c) => c,
                None => match next_waypoint(&robot.belief, planner, pose) {
                    Waypoint::Cover(c) => {
                        planner.path.clear();
                        if c.manhattan(pose) > 1 {
                            match plan_travel(&robot.belief, pose, c) {
                                Ok(mut path) => {
                                    path.pop();
                                    planner.path.extend(path);
                                }
                                Err(e) => {
                                    debug!("robot {}: {e}", robot.id);
                                    if let Some(ch) = robot.belief.mark_forbidden(c) {
                                        robot.outbox.push(ch);
                                    }
                                    continue;
                                }
                            }
                        }
                        robot.target = Some(c);
                        c
                    }
                    Waypoint::Done { unreachable } => {
                        for c in unreachable {
                            if let Some(ch) = robot.belief.mark_forbidden(c) {
                                robot.outbox.push(ch);
                            }
                        }
                        robot.region_done = true;
                        return;
                    }
                },
            };
            if robot.belief.state(target) != CellState::Unexplored {
                robot.target = None;
                planner.path.clear();
                continue;
            }
            if let Some(&next) = planner.path.front() {
                if robot.belief.state(next).is_blocked() {
                    robot.target = None;
                    planner.path.clear();
                    continue;
                }
                planner.path.pop_front();
                robot.step = Some((Step::Travel(next), robot.clock + travel_cost));
                continue;
            }
            robot.target = None;
            robot.step = Some((Step::Cover(target), robot.clock + cover_cost));
        }
    }

    fn cover(&mut self, i: usize, cell: Cell, at: f64) {
        if let Ok((change, found)) = self.physical.mark_covered(cell) {
            if let Some(change) = change {
                self.changes.push(ChangeRow { tick: self.tick, change });
            }
            self.discoveries.extend(std::iter::repeat_n(at, found));
        }
        let marked = if self.sigma > 0.0 {
            let normal = Normal::new(0.0, self.sigma).expect("sigma is validated");
            let (x, y) = self.physical.cell_center_m(cell);
            let (nx, ny) = (x + normal.sample(&mut self.noise_rng), y + normal.sample(&mut self.noise_rng));
            self.physical.cell_of_m(nx, ny)
        } else {
            Some(cell)
        };
        let robot = &mut self.robots[i];
        if let Some(m) = marked.filter(|m| !robot.belief.state(*m).is_blocked()) {
            if let Ok((Some(ch), _)) = robot.belief.mark_covered(m) {
                robot.outbox.push(ch);
            }
        }
    }

    /// Rectangles claimed by committed robots other than `except`.
    fn claims(&self, task: TaskId, except: usize) -> Vec<Rect> {
        let mut out = Vec::new();
        for (j, r) in self.robots.iter().enumerate() {
            if j == except || self.confirmed.contains(&j) {
                continue;
            }
            if r.task == Some(task) {
                if let Some(reg) = r.region() {
                    out.push(reg);
                }
            }
            if let Some((t, reg)) = r.pending {
                if t == task {
                    out.push(reg);
                }
            }
        }
        out
    }

    fn claim_subregion(&self, i: usize) -> Option<Rect> {
        let robot = &self.robots[i];
        let task = robot.task?;
        let claimed = self.claims(task, i);
        partition_subregions(&self.physical.task(task).rect, self.n_max)
            .into_iter()
            .filter(|s| !s.is_empty() && robot.belief.unexplored_in(s) > 0 && !claimed.iter().any(|c| overlaps(c, s)))
            .min_by(|a, b| centre_distance(robot.cell, a).total_cmp(&centre_distance(robot.cell, b)))
    }

    fn handle_completions(&mut self) {
        for i in 0..self.robots.len() {
            let robot = &self.robots[i];
            if !robot.alive || robot.des != DesState::WK || !robot.region_done {
                continue;
            }
            let robot = &mut self.robots[i];
            robot.region_done = false;
            robot.planner = None;
            robot.target = None;
            if let Some((task, rect)) = robot.pending.take() {
                robot.assign(task, rect);
                continue;
            }
            if let Some(sub) = self.claim_subregion(i) {
                let task = self.robots[i].task.expect("claim needs a task");
                self.robots[i].assign(task, sub);
                continue;
            }
            let done = self.robots[i].task.map_or(Payload::None, Payload::Task);
            self.robots[i].unassign();
            self.event(i, DesEvent::E2, done);
            match self.strategy {
                Strategy::Care => self.queue.push_back(Trigger::NoIdling(i)),
                Strategy::Fr => self.first_responder(i),
                Strategy::Nonco => self.event(i, DesEvent::E4, Payload::None),
            }
        }
    }

    fn committed_to(&self, task: TaskId) -> bool {
        self.robots.iter().enumerate().any(|(j, r)| {
            !self.confirmed.contains(&j) && (r.task == Some(task) || r.pending.is_some_and(|(t, _)| t == task))
        })
    }

    /// Sends an idle robot back into play while some task is unattended.
    fn retrigger(&mut self) -> bool {
        let tasks: Vec<TaskId> = self.physical.tasks().iter().map(|t| t.id).collect();
        for i in 0..self.robots.len() {
            if let Some(r) = self.robots[i].standby {
                if self.robots[i].belief.unexplored_count(r) == 0 || !self.committed_to(r) {
                    self.robots[i].standby = None;
                }
            }
        }
        if self.strategy == Strategy::Nonco || !self.queue.is_empty() {
            return false;
        }
        let Some(i) = (0..self.robots.len())
            .find(|&i| self.robots[i].alive && self.robots[i].des == DesState::ID && self.robots[i].standby.is_none())
        else {
            return false;
        };
        let orphan =
            tasks.iter().find(|&&r| self.robots[i].belief.unexplored_count(r) > 0 && !self.committed_to(r)).copied();
        let Some(orphan) = orphan else {
            return false;
        };
        self.event(i, DesEvent::E5, Payload::Task(orphan));
        match self.strategy {
            Strategy::Care => self.queue.push_back(Trigger::NoIdling(i)),
            _ => self.first_responder(i),
        }
        true
    }

    fn snapshot(&self, decider: usize, params: GameParams) -> TeamSnapshot {
        let map = &self.robots[decider].belief;
        let robots = self
            .robots
            .iter()
            .enumerate()
            .map(|(j, r)| RobotView {
                id: j,
                pos_m: self.physical.cell_center_m(r.cell),
                state: r.des,
                task: r.task,
                pending: r.pending.map(|p| p.0),
                remaining_s: match (r.task, &r.planner) {
                    (Some(t), Some(_)) => map.unexplored_count(t) as f64 / self.omega,
                    _ => 0.0,
                },
                battery: r.battery,
                tasking_time: r.tasking_time,
                alive: r.alive,
                confirmed_failed: self.confirmed.contains(&j),
            })
            .collect();
        let tasks = self
            .physical
            .tasks()
            .iter()
            .map(|t| TaskView {
                id: t.id,
                lambda: t.lambda,
                discovered: t.discovered,
                unexplored: map.unexplored_count(t.id),
                centroid_m: self.physical.task_centroid_m(t.id),
            })
            .collect();
        TeamSnapshot { robots, tasks, params }
    }

    fn first_responder(&mut self, i: usize) {
        let params = GameParams { kappa1: 0, ..self.params };
        let snap = self.snapshot(i, params);
        let Some(built) = build_noidling_game(i, &snap, &mut self.game_rng) else {
            self.event(i, DesEvent::E4, Payload::None);
            return;
        };
        let g = &built.game;
        let mut best = 0;
        for k in 1..g.num_actions() {
            if g.worth[k] * g.prob[0][k] > g.worth[best] * g.prob[0][best] {
                best = k;
            }
        }
        let task = g.actions[best];
        self.apply_assignment(&built, &[Some(best)], i, Payload::Task(task));
    }

    fn resolve_games(&mut self) {
        if !self.queue.is_empty() {
            // players exchange maps when a game starts
            self.sync_maps();
        }
        while let Some(trigger) = self.queue.pop_front() {
            match trigger {
                Trigger::NoIdling(i) => {
                    if !self.robots[i].alive || self.robots[i].des != DesState::NG {
                        continue;
                    }
                    let snap = self.snapshot(i, self.params);
                    match build_noidling_game(i, &snap, &mut self.game_rng) {
                        None => self.event(i, DesEvent::E4, Payload::None),
                        Some(built) => {
                            self.play(built, i);
                            return;
                        }
                    }
                }
                Trigger::Resilience(f) => {
                    let Some(lost) = self.robots[f].task else {
                        continue;
                    };
                    let Some(decider) =
                        (0..self.robots.len()).find(|&j| self.robots[j].alive && !self.confirmed.contains(&j))
                    else {
                        continue;
                    };
                    if self.robots[decider].belief.unexplored_count(lost) == 0 {
                        continue;
                    }
                    let coworker = (0..self.robots.len()).any(|j| {
                        j != f
                            && !self.confirmed.contains(&j)
                            && self.robots[j].task == Some(lost)
                            && self.robots[j].planner.is_some()
                    });
                    if coworker {
                        self.takeover(f, lost, decider);
                        continue;
                    }
                    let snap = self.snapshot(decider, self.params);
                    if let Some(built) = build_resilience_game(f, &snap) {
                        self.play(built, decider);
                        return;
                    }
                }
            }
        }
    }

    /// A co-worker is already in the failed robot's task: reactivate a
    /// standby robot for it if there is one.
    fn takeover(&mut self, failed: usize, lost: TaskId, decider: usize) {
        let Some(s) = (0..self.robots.len()).find(|&j| {
            let r = &self.robots[j];
            r.alive && r.des == DesState::ID && r.standby == Some(lost)
        }) else {
            return;
        };
        let payload = self.payload_robot(failed);
        self.event(s, DesEvent::E1, payload);
        let map = self.robots[decider].belief.clone();
        let occupants = self.occupants(lost, &[s]);
        let incoming = [Incoming { id: s, pos: self.robots[s].cell, prob: 1.0 }];
        for (j, place) in post_game_assign(&map, lost, self.n_max, &occupants, &incoming) {
            self.place(j, lost, place, false);
        }
        let next = if self.robots[s].planner.is_some() { DesEvent::E3 } else { DesEvent::E4 };
        self.event(s, next, payload);
    }

    fn occupants(&self, task: TaskId, exclude: &[usize]) -> Vec<Occupant> {
        let mut out = Vec::new();
        for (j, r) in self.robots.iter().enumerate() {
            if exclude.contains(&j) || self.confirmed.contains(&j) {
                continue;
            }
            let claimed = if r.task == Some(task) && r.planner.is_some() {
                r.region()
            } else if let Some((_, rect)) = r.pending.filter(|(t, _)| *t == task) {
                Some(rect)
            } else {
                continue;
            };
            out.push(Occupant { id: j, pos: r.cell, claimed, prob: 0.0 });
        }
        out
    }

    /// Applies a placement for robot `j` in `task`.
    fn place(&mut self, j: usize, task: TaskId, place: Placement, as_pending: bool) {
        let robot = &mut self.robots[j];
        match place {
            Placement::Region(rect) if as_pending => robot.pending = Some((task, rect)),
            Placement::Region(rect) => {
                if robot.task == Some(task) && robot.region() == Some(rect) {
                    return;
                }
                if robot.pending.is_some_and(|(t, _)| t == task) && robot.task != Some(task) {
                    robot.pending = Some((task, rect));
                    return;
                }
                robot.assign(task, rect);
            }
            Placement::Standby if as_pending => {}
            Placement::Standby => {
                robot.unassign();
                robot.standby = Some(task);
            }
        }
    }

    fn play(&mut self, built: BuiltGame, decider: usize) {
        let id = self.games.len() + 1;
        let enter = match built.kind {
            GameKind::NoIdling => DesEvent::E5,
            GameKind::Resilience => DesEvent::E1,
        };
        for &p in &built.game.players {
            if matches!(self.robots[p].des, DesState::WK | DesState::ID) {
                self.event(p, enter, Payload::Game(id));
            }
        }
        let seed: u64 = self.game_rng.random();
        let (best, phi_init, phi_star) = match max_logit(&built.game, seed) {
            Ok(out) => (out.best, out.initial_potential, out.best_potential),
            Err(e) => {
                warn!("game {id}: {e}");
                let phi = crate::game::potential(&built.game, &built.game.initial);
                (built.game.initial.clone(), phi, phi)
            }
        };
        let team_init = team_potential(&built.team_assignment(&built.game.initial), &built.remaining, &built.team_prob);
        let team_star = team_potential(&built.team_assignment(&best), &built.remaining, &built.team_prob);
        let remaining_sum: f64 = built.remaining.iter().sum();
        let assigned = self.apply_assignment(&built, &best, decider, Payload::Game(id));
        let record = GameRecord {
            id,
            kind: built.kind,
            tick: self.tick,
            players: built.game.players.iter().map(|&p| self.robots[p].id).collect(),
            actions: built.game.actions.clone(),
            phi_init,
            phi_star,
            g_p: gain_of_players(phi_star, phi_init, built.game.worth_sum()),
            team_init,
            team_star,
            g_t: gain_of_team(team_star, team_init, remaining_sum),
            assigned,
        };
        info!("game {id} ({}) at tick {}: G_P = {:.4}, G_T = {:.4}", record.kind, self.tick, record.g_p, record.g_t);
        self.games.push(record);
    }

    /// Moves players to their chosen tasks and coordinates sub-regions.
    fn apply_assignment(
        &mut self,
        built: &BuiltGame,
        a: &[Option<usize>],
        decider: usize,
        payload: Payload,
    ) -> Vec<(usize, TaskId)> {
        let g = &built.game;
        let map = self.robots[decider].belief.clone();
        let mut plans = Vec::with_capacity(g.players.len());
        for (k, &p) in g.players.iter().enumerate() {
            let Some(choice) = a[k].map(|x| g.actions[x]) else {
                continue;
            };
            let robot = &self.robots[p];
            let plan = if robot.task == Some(choice) && robot.planner.is_some() {
                Plan::Stay
            } else if built.kind == GameKind::NoIdling && robot.planner.is_some() {
                Plan::Pending(choice)
            } else {
                Plan::Move(choice)
            };
            plans.push((k, p, plan));
        }
        for &(_, p, plan) in &plans {
            match plan {
                Plan::Move(_) => {
                    self.robots[p].unassign();
                    self.robots[p].pending = None;
                }
                Plan::Pending(_) => self.robots[p].pending = None,
                Plan::Stay => {}
            }
        }
        let mut by_task: BTreeMap<TaskId, Vec<(usize, usize, bool)>> = BTreeMap::new();
        for &(k, p, plan) in &plans {
            match plan {
                Plan::Move(r) => by_task.entry(r).or_default().push((k, p, false)),
                Plan::Pending(r) => by_task.entry(r).or_default().push((k, p, true)),
                Plan::Stay => {}
            }
        }
        for (r, movers) in by_task {
            let ids: Vec<usize> = movers.iter().map(|m| m.1).collect();
            let occupants = self.occupants(r, &ids);
            let col = g.actions.iter().position(|x| *x == r).expect("chosen from the action set");
            let incoming: Vec<Incoming> = movers
                .iter()
                .map(|&(k, p, _)| Incoming { id: p, pos: self.robots[p].cell, prob: g.prob[k][col] })
                .collect();
            for (j, place) in post_game_assign(&map, r, self.n_max, &occupants, &incoming) {
                let pending = movers.iter().any(|&(_, p, pend)| p == j && pend);
                self.place(j, r, place, pending);
            }
        }
        let mut assigned = Vec::new();
        for &(_, p, plan) in &plans {
            let robot = &self.robots[p];
            let task = match plan {
                Plan::Stay => robot.task,
                Plan::Pending(r) => robot.pending.map(|_| r),
                Plan::Move(_) => robot.task,
            };
            if let Some(t) = task {
                assigned.push((robot.id, t));
            }
            if matches!(robot.des, DesState::NG | DesState::RG) {
                let next = if robot.planner.is_some() { DesEvent::E3 } else { DesEvent::E4 };
                let pl = if next == DesEvent::E3 { task.map_or(payload, Payload::Task) } else { payload };
                self.event(p, next, pl);
            }
        }
        // players dropped to standby while still in a game state
        for &p in &g.players {
            if matches!(self.robots[p].des, DesState::NG | DesState::RG) {
                self.event(p, DesEvent::E4, payload);
            }
        }
        assigned
    }

    fn stop_covered(&mut self) {
        for i in 0..self.robots.len() {
            let r = &self.robots[i];
            if r.alive && r.des == DesState::ID && r.belief.total_unexplored() == 0 {
                self.event(i, DesEvent::E6, Payload::None);
            }
        }
    }

    fn record_tick(&mut self) {
        for r in &self.robots {
            if !r.alive {
                continue;
            }
            let (x_m, y_m) = self.physical.cell_center_m(r.cell);
            self.trajectories.push(TrajectoryRow {
                tick: self.tick,
                robot: r.id,
                x_m,
                y_m,
                cell: r.cell,
                mode: r.mode(),
                state: r.des,
            });
        }
        if let Some(every) = self.options.snapshot_every.filter(|e| *e > 0) {
            if self.tick.is_multiple_of(every) {
                self.snapshots.push((self.tick, self.physical.render_text()));
            }
        }
    }

    fn finish(&mut self, violation: bool) -> RunOutput {
        let live: Vec<&Robot> = self.robots.iter().filter(|r| r.alive).collect();
        let ct = live.iter().map(|r| r.last_work).fold(0.0, f64::max);
        let rr: Vec<f64> = live.iter().map(|r| reliability(&r.battery, r.tasking_time)).collect();
        let summary = reliability_summary(&rr);
        let placed = self.physical.targets().len();
        let metrics = Metrics {
            cr: self.physical.coverage_ratio(&self.truth),
            ct,
            rr_min: summary.map(|s| s.0),
            rr_mean: summary.map(|s| s.1),
            rr_max: summary.map(|s| s.2),
            notf: self.physical.targets_found(),
            targets_placed: placed,
            totd: time_of_discovery(&self.discoveries, placed),
            games_resilience: self.games.iter().filter(|g| g.kind == GameKind::Resilience).count(),
            games_noidling: self.games.iter().filter(|g| g.kind == GameKind::NoIdling).count(),
            failures: self.failures.len(),
            ticks: self.tick + 1,
            liveness_violation: violation,
        };
        info!("run finished after {} ticks: CR = {:.4}, CT = {:.2}", metrics.ticks, metrics.cr, metrics.ct);
        RunOutput {
            metrics,
            events: std::mem::take(&mut self.events),
            games: std::mem::take(&mut self.games),
            trajectories: std::mem::take(&mut self.trajectories),
            changes: std::mem::take(&mut self.changes),
            detections: std::mem::take(&mut self.detections),
            failures: std::mem::take(&mut self.failures),
            final_map: self.physical.clone(),
            truth: self.truth.clone(),
            snapshots: std::mem::take(&mut self.snapshots),
            robot_ids: self.robots.iter().map(|r| r.id).collect(),
        }
    }
}

/// Adds zero-mean Gaussian noise per axis; `sigma = 0` is the identity.
pub fn apply_localization_noise<R: Rng>(pos: (f64, f64), sigma: f64, rng: &mut R) -> (f64, f64) {
    if sigma <= 0.0 {
        return pos;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    (pos.0 + normal.sample(rng), pos.1 + normal.sample(rng))
}
