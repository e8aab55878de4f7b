//! Per-robot discrete event supervisor: state machine, heartbeat failure
//! detection, game construction and post-game sub-region coordination.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{GameInstance, JointAction, LogitParams};
use crate::models::{available_worth, remaining_worth, success_probability, BatteryParams, SuccessInputs};
use crate::world::{partition_subregions, Cell, GridMap, Rect, TaskId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SupervisorError {
    #[error("event {event} is not defined in state {state}")]
    Undefined { state: DesState, event: DesEvent },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DesState {
    /// Start.
    ST,
    /// Working on an assigned region.
    WK,
    /// Playing a no-idling game.
    NG,
    /// Playing a resilience game.
    RG,
    /// Idle.
    ID,
    /// Failed.
    FL,
    /// Stopped after complete coverage.
    SP,
}

impl DesState {
    pub fn is_terminal(self) -> bool {
        matches!(self, DesState::SP | DesState::FL)
    }
}

impl fmt::Display for DesState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DesEvent {
    /// Mission start.
    E0,
    /// Failure confirmed nearby / join a resilience game.
    E1,
    /// Own task finished.
    E2,
    /// New task assigned.
    E3,
    /// No task assigned.
    E4,
    /// Invited to (or re-entering) a no-idling game.
    E5,
    /// Whole area covered.
    E6,
    /// Own failure.
    E7,
}

impl fmt::Display for DesEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = *self as u8;
        write!(f, "e{k}")
    }
}

/// The partial transition function.
pub fn step(state: DesState, event: DesEvent) -> Result<DesState, SupervisorError> {
    use DesEvent::*;
    use DesState::*;
    let next = match (state, event) {
        (SP | FL, _) => None,
        (_, E7) => Some(FL),
        (ST, E0) => Some(WK),
        (WK, E1) => Some(RG),
        (WK, E2) | (WK, E5) => Some(NG),
        (NG, E3) | (RG, E3) => Some(WK),
        (NG, E4) | (RG, E4) => Some(ID),
        (ID, E5) => Some(NG),
        (ID, E1) => Some(RG),
        (ID, E6) => Some(SP),
        _ => None,
    };
    next.ok_or(SupervisorError::Undefined { state, event })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    None,
    FailedRobot(usize),
    Task(TaskId),
    Game(usize),
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::None => Ok(()),
            Payload::FailedRobot(v) => write!(f, "failed=v{v}"),
            Payload::Task(r) => write!(f, "task={r}"),
            Payload::Game(g) => write!(f, "game={g}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub tick: u64,
    pub robot: usize,
    pub event: DesEvent,
    pub from: DesState,
    pub to: DesState,
    pub payload: Payload,
}

/// One observer's view of the team's heartbeats.
#[derive(Debug, Clone, PartialEq)]
pub struct HeartbeatTable {
    pub period_s: f64,
    pub timeout_s: f64,
    last_heard: Vec<f64>,
}

impl HeartbeatTable {
    pub fn new(robots: usize, period_s: f64, timeout_s: f64, start: f64) -> Self {
        Self { period_s, timeout_s, last_heard: vec![start; robots] }
    }

    pub fn record(&mut self, robot: usize, at: f64) {
        if at > self.last_heard[robot] {
            self.last_heard[robot] = at;
        }
    }

    pub fn last_heard(&self, robot: usize) -> f64 {
        self.last_heard[robot]
    }

    pub fn suspects(&self, robot: usize, now: f64) -> bool {
        now - self.last_heard[robot] > self.timeout_s
    }
}

/// Confirms robots whose voters hold a strict suspicion majority.
///
/// `votes[v]` holds the flags of `v`'s nearest voters. Confirmation is sticky;
/// only newly confirmed robots are returned.
pub fn detect_failures(votes: &BTreeMap<usize, Vec<bool>>, confirmed: &mut BTreeSet<usize>) -> Vec<usize> {
    let mut fresh = Vec::new();
    for (&v, flags) in votes {
        if confirmed.contains(&v) || flags.is_empty() {
            continue;
        }
        let yes = flags.iter().filter(|f| **f).count();
        if 2 * yes > flags.len() {
            confirmed.insert(v);
            fresh.push(v);
        }
    }
    fresh
}

/// `k` nearest candidates to `center` by Euclidean distance, ties by id.
pub fn nearest_neighbors(
    center: (f64, f64),
    candidates: impl IntoIterator<Item = (usize, (f64, f64))>,
    k: usize,
) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> =
        candidates.into_iter().map(|(id, (x, y))| ((x - center.0).hypot(y - center.1), id)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, id)| id).collect()
}

/// Decision parameters shared by the game builders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameParams {
    pub travel_speed: f64,
    pub tasking_speed: f64,
    pub eta: f64,
    pub gamma: f64,
    pub kappa1: usize,
    pub kappa2: usize,
    pub logit: LogitParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotView {
    pub id: usize,
    pub pos_m: (f64, f64),
    pub state: DesState,
    /// Current task `r_c`.
    pub task: Option<TaskId>,
    pub pending: Option<TaskId>,
    /// `t_c(r_c)`: seconds of work left on the current task, 0 without one.
    pub remaining_s: f64,
    pub battery: BatteryParams,
    pub tasking_time: f64,
    pub alive: bool,
    pub confirmed_failed: bool,
}

impl RobotView {
    /// Can join a game as a player.
    pub fn eligible(&self) -> bool {
        self.alive && !self.confirmed_failed && matches!(self.state, DesState::WK | DesState::ID)
    }

    pub fn near_finish(&self, eta: f64) -> bool {
        self.remaining_s <= eta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskView {
    pub id: TaskId,
    pub lambda: f64,
    pub discovered: u32,
    pub unexplored: usize,
    pub centroid_m: (f64, f64),
}

/// What a deciding robot knows about the team at trigger time.
#[derive(Debug, Clone, PartialEq)]
pub struct TeamSnapshot {
    /// Indexed by robot id.
    pub robots: Vec<RobotView>,
    /// Indexed by task index.
    pub tasks: Vec<TaskView>,
    pub params: GameParams,
}

impl TeamSnapshot {
    fn committed(&self) -> impl Iterator<Item = &RobotView> {
        // unconfirmed failures still count: nobody knows yet
        self.robots.iter().filter(|v| !v.confirmed_failed)
    }

    /// `t_c(r)`: remaining time on task `r` shared among the robots committed
    /// to it; infinite when unattended but unfinished.
    pub fn task_time_left(&self, r: TaskId) -> f64 {
        let n_u = self.tasks[r.index()].unexplored;
        if n_u == 0 {
            return 0.0;
        }
        let k = self.committed().filter(|v| v.task == Some(r) || v.pending == Some(r)).count();
        if k == 0 {
            f64::INFINITY
        } else {
            n_u as f64 / (self.params.tasking_speed * k as f64)
        }
    }

    pub fn remaining_worth(&self, r: TaskId) -> f64 {
        let t = &self.tasks[r.index()];
        remaining_worth(t.lambda, t.discovered)
    }

    /// `p_r(v)`; a near-finishing robot moving elsewhere adds its own remainder.
    pub fn success(&self, v: &RobotView, r: TaskId, with_remainder: bool) -> f64 {
        let t = &self.tasks[r.index()];
        let finishing = v.state == DesState::WK && v.near_finish(self.params.eta);
        let extra = if with_remainder && finishing && v.task != Some(r) { v.remaining_s } else { 0.0 };
        let inputs = SuccessInputs {
            battery: v.battery,
            tasking_time: v.tasking_time,
            distance_m: (v.pos_m.0 - t.centroid_m.0).hypot(v.pos_m.1 - t.centroid_m.1),
            unexplored: t.unexplored,
            travel_speed: self.params.travel_speed,
            tasking_speed: self.params.tasking_speed,
            extra_current_task_s: extra,
        };
        success_probability(&inputs).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GameKind {
    Resilience,
    NoIdling,
}

impl fmt::Display for GameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GameKind::Resilience => "resilience",
            GameKind::NoIdling => "no-idling",
        })
    }
}

/// A constructed game plus the team-wide context needed for `Φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltGame {
    pub kind: GameKind,
    pub game: GameInstance,
    /// `w̃_r` for every task.
    pub remaining: Vec<f64>,
    /// Robots counted in `Φ`: players first, then committed non-players.
    pub team: Vec<usize>,
    /// `p` per counted robot and task index.
    pub team_prob: Vec<Vec<f64>>,
    /// Task index of each non-player, in `team` order after the players.
    pub fixed: Vec<Option<usize>>,
}

impl BuiltGame {
    /// Team-wide assignment for `Φ` when players play `a`.
    pub fn team_assignment(&self, a: &JointAction) -> Vec<Option<usize>> {
        a.iter().map(|ai| ai.map(|k| self.game.actions[k].index())).chain(self.fixed.iter().copied()).collect()
    }
}

fn assemble(
    snap: &TeamSnapshot,
    kind: GameKind,
    players: Vec<usize>,
    actions: Vec<TaskId>,
    initial: JointAction,
) -> BuiltGame {
    let m_all = snap.tasks.len();
    let remaining: Vec<f64> = snap.tasks.iter().map(|t| snap.remaining_worth(t.id)).collect();
    let player_set: BTreeSet<usize> = players.iter().copied().collect();
    let others: Vec<&RobotView> =
        snap.committed().filter(|v| !player_set.contains(&v.id) && v.task.is_some()).collect();

    let prob: Vec<Vec<f64>> =
        players.iter().map(|&id| actions.iter().map(|&r| snap.success(&snap.robots[id], r, true)).collect()).collect();
    let worth: Vec<f64> = actions
        .iter()
        .map(|&r| {
            let ps: Vec<f64> = others.iter().filter(|v| v.task == Some(r)).map(|v| snap.success(v, r, false)).collect();
            available_worth(remaining[r.index()], &ps)
        })
        .collect();

    let mut team_prob = Vec::with_capacity(players.len() + others.len());
    for (i, _) in players.iter().enumerate() {
        let mut row = vec![0.0; m_all];
        for (k, r) in actions.iter().enumerate() {
            row[r.index()] = prob[i][k];
        }
        team_prob.push(row);
    }
    let mut fixed = Vec::with_capacity(others.len());
    for v in &others {
        let r = v.task.expect("filtered on task");
        let mut row = vec![0.0; m_all];
        row[r.index()] = snap.success(v, r, false);
        team_prob.push(row);
        fixed.push(Some(r.index()));
    }
    let team = players.iter().copied().chain(others.iter().map(|v| v.id)).collect();
    let game = GameInstance { players, actions, worth, prob, params: snap.params.logit, initial };
    BuiltGame { kind, game, remaining, team, team_prob, fixed }
}

/// No-idling game triggered by `idler`. `None` when no task has enough work left.
pub fn build_noidling_game<R: Rng>(idler: usize, snap: &TeamSnapshot, rng: &mut R) -> Option<BuiltGame> {
    let me = &snap.robots[idler];
    let candidates = snap
        .robots
        .iter()
        .filter(|v| v.id != idler && v.alive && !v.confirmed_failed && v.state != DesState::FL)
        .map(|v| (v.id, v.pos_m));
    let mut players = vec![idler];
    let mut invited: Vec<usize> = nearest_neighbors(me.pos_m, candidates, snap.params.kappa1)
        .into_iter()
        .filter(|&id| snap.robots[id].eligible() && snap.robots[id].near_finish(snap.params.eta))
        .collect();
    invited.sort_unstable();
    players.extend(invited);

    let actions: Vec<TaskId> = snap
        .tasks
        .iter()
        .map(|t| t.id)
        .filter(|&r| snap.tasks[r.index()].unexplored > 0 && snap.task_time_left(r) >= snap.params.gamma)
        .collect();
    if actions.is_empty() {
        return None;
    }
    let initial = players.iter().map(|_| Some(rng.random_range(0..actions.len()))).collect();
    Some(assemble(snap, GameKind::NoIdling, players, actions, initial))
}

/// Resilience game after `failed` is confirmed. The caller handles the
/// co-worker takeover case; `None` when no eligible player remains.
pub fn build_resilience_game(failed: usize, snap: &TeamSnapshot) -> Option<BuiltGame> {
    let dead = &snap.robots[failed];
    let lost = dead.task?;
    let candidates = snap.robots.iter().filter(|v| v.id != failed && v.eligible()).map(|v| (v.id, v.pos_m));
    let players = nearest_neighbors(dead.pos_m, candidates, snap.params.kappa2);
    if players.is_empty() {
        return None;
    }
    let mut actions = vec![lost];
    for &id in &players {
        let v = &snap.robots[id];
        if let Some(r) = v.task {
            if v.state == DesState::WK && v.remaining_s > snap.params.eta && !actions.contains(&r) {
                actions.push(r);
            }
        }
    }
    let initial = players
        .iter()
        .map(|&id| {
            let r = snap.robots[id].task.filter(|r| actions.contains(r)).unwrap_or(lost);
            actions.iter().position(|a| *a == r)
        })
        .collect();
    Some(assemble(snap, GameKind::Resilience, players, actions, initial))
}

/// A robot already working in (or headed to) the task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occupant {
    pub id: usize,
    pub pos: Cell,
    pub claimed: Option<Rect>,
    pub prob: f64,
}

/// A robot newly allocated to the task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incoming {
    pub id: usize,
    pub pos: Cell,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Region(Rect),
    Standby,
}

fn centre_distance(pos: Cell, r: &Rect) -> f64 {
    let (cx, cy) = r.centroid();
    (pos.x as f64 + 0.5 - cx).hypot(pos.y as f64 + 0.5 - cy)
}

fn nearest_of(pos: Cell, subs: &[Rect], allowed: impl Fn(usize) -> bool) -> Option<usize> {
    (0..subs.len())
        .filter(|&k| allowed(k))
        .min_by(|&a, &b| centre_distance(pos, &subs[a]).total_cmp(&centre_distance(pos, &subs[b])).then(a.cmp(&b)))
}

/// Splits `task` into `n_max` sub-regions; occupants keep theirs, incoming
/// robots take free incomplete ones by rank, the rest go on standby.
pub fn post_game_assign(
    map: &GridMap,
    task: TaskId,
    n_max: usize,
    occupants: &[Occupant],
    incoming: &[Incoming],
) -> Vec<(usize, Placement)> {
    let subs = partition_subregions(&map.task(task).rect, n_max);
    let mut taken = vec![false; subs.len()];
    let mut out = Vec::new();
    let mut queue: Vec<Incoming> = incoming.to_vec();

    let mut occ = occupants.to_vec();
    occ.sort_by_key(|o| o.id);
    for o in occ {
        let k = o
            .claimed
            .and_then(|c| subs.iter().position(|s| *s == c))
            .or_else(|| subs.iter().position(|s| s.contains(o.pos)))
            .or_else(|| nearest_of(o.pos, &subs, |k| !subs[k].is_empty()));
        match k {
            Some(k) if !taken[k] => {
                taken[k] = true;
                out.push((o.id, Placement::Region(subs[k])));
            }
            _ => queue.push(Incoming { id: o.id, pos: o.pos, prob: o.prob }),
        }
    }

    queue.sort_by(|a, b| b.prob.total_cmp(&a.prob).then(a.id.cmp(&b.id)));
    for inc in queue {
        match nearest_of(inc.pos, &subs, |k| !taken[k] && map.unexplored_in(&subs[k]) > 0) {
            Some(k) => {
                taken[k] = true;
                out.push((inc.id, Placement::Region(subs[k])));
            }
            None => out.push((inc.id, Placement::Standby)),
        }
    }
    out
}
