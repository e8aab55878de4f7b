//! Run artifacts: CSV logs, final map dump and an SVG trajectory render.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::engine::{ChangeRow, DetectionRow, FailureMark, GameRecord, Metrics, RunOutput, TrajectoryRow, TOTD_STEPS};
use crate::supervisor::{EventRecord, Payload};
use crate::world::{CellState, GridMap};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("trajectory cell ({x}, {y}) lies outside the {width}x{height} map")]
    GridMismatch { x: usize, y: usize, width: usize, height: usize },
}

pub const METRICS_HEADER: [&str; 13] = [
    "cr",
    "ct",
    "rr_min",
    "rr_mean",
    "rr_max",
    "notf",
    "targets_placed",
    "games_resilience",
    "games_noidling",
    "failures",
    "ticks",
    "liveness_violation",
    "totd",
];
pub const EVENTS_HEADER: [&str; 7] = ["tick", "robot", "event", "from", "to", "payload_kind", "payload"];
pub const GAMES_HEADER: [&str; 12] = [
    "id",
    "kind",
    "tick",
    "players",
    "actions",
    "phi_init",
    "phi_star",
    "g_p",
    "team_init",
    "team_star",
    "g_t",
    "assigned",
];
pub const TRAJECTORIES_HEADER: [&str; 8] = ["tick", "robot", "x", "y", "cell_x", "cell_y", "mode", "state"];
pub const CHANGES_HEADER: [&str; 5] = ["tick", "x", "y", "old", "new"];
pub const DETECTIONS_HEADER: [&str; 4] = ["tick", "robot", "voters", "suspecting"];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Metric fields in `METRICS_HEADER` order; ToTD values are `;`-joined.
pub fn metrics_fields(m: &Metrics) -> Vec<String> {
    vec![
        m.cr.to_string(),
        m.ct.to_string(),
        opt(m.rr_min),
        opt(m.rr_mean),
        opt(m.rr_max),
        m.notf.to_string(),
        m.targets_placed.to_string(),
        m.games_resilience.to_string(),
        m.games_noidling.to_string(),
        m.failures.to_string(),
        m.ticks.to_string(),
        m.liveness_violation.to_string(),
        m.totd.iter().map(|t| opt(*t)).collect::<Vec<_>>().join(";"),
    ]
}

pub fn write_metrics<W: io::Write>(out: W, m: &Metrics) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    w.write_record(metrics_fields(m))?;
    w.flush()?;
    Ok(())
}

fn payload_fields(p: &Payload) -> (&'static str, String) {
    match p {
        Payload::None => ("none", String::new()),
        Payload::FailedRobot(r) => ("robot", r.to_string()),
        Payload::Task(t) => ("task", t.0.to_string()),
        Payload::Game(g) => ("game", g.to_string()),
    }
}

pub fn write_events<W: io::Write>(out: W, events: &[EventRecord]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENTS_HEADER)?;
    for e in events {
        let (kind, value) = payload_fields(&e.payload);
        w.write_record([
            e.tick.to_string(),
            e.robot.to_string(),
            e.event.to_string(),
            e.from.to_string(),
            e.to.to_string(),
            kind.to_string(),
            value,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_games<W: io::Write>(out: W, games: &[GameRecord]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GAMES_HEADER)?;
    for g in games {
        w.write_record([
            g.id.to_string(),
            g.kind.to_string(),
            g.tick.to_string(),
            join(&g.players),
            join(g.actions.iter().map(|a| a.0)),
            g.phi_init.to_string(),
            g.phi_star.to_string(),
            g.g_p.to_string(),
            g.team_init.to_string(),
            g.team_star.to_string(),
            g.g_t.to_string(),
            join(g.assigned.iter().map(|(r, t)| format!("{r}:{}", t.0))),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectories<W: io::Write>(out: W, rows: &[TrajectoryRow]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORIES_HEADER)?;
    for r in rows {
        w.write_record([
            r.tick.to_string(),
            r.robot.to_string(),
            r.x_m.to_string(),
            r.y_m.to_string(),
            r.cell.x.to_string(),
            r.cell.y.to_string(),
            r.mode.to_string(),
            r.state.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_changes<W: io::Write>(out: W, rows: &[ChangeRow]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CHANGES_HEADER)?;
    for r in rows {
        let c = &r.change;
        w.write_record([
            r.tick.to_string(),
            c.cell.x.to_string(),
            c.cell.y.to_string(),
            c.old.name().to_string(),
            c.new.name().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_detections<W: io::Write>(out: W, rows: &[DetectionRow]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DETECTIONS_HEADER)?;
    for r in rows {
        w.write_record([r.tick.to_string(), r.robot.to_string(), join(&r.voters), r.suspecting.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Files written by [`write_run`].
pub const RUN_FILES: [&str; 8] = [
    "metrics.csv",
    "events.csv",
    "games.csv",
    "trajectories.csv",
    "changes.csv",
    "detections.csv",
    "map_final.txt",
    "trajectories.svg",
];

/// Writes every artifact of one run into `dir`, creating it if needed.
pub fn write_run(dir: &Path, run: &RunOutput) -> Result<(), ReportError> {
    fs::create_dir_all(dir)?;
    write_metrics(fs::File::create(dir.join("metrics.csv"))?, &run.metrics)?;
    write_events(fs::File::create(dir.join("events.csv"))?, &run.events)?;
    write_games(fs::File::create(dir.join("games.csv"))?, &run.games)?;
    write_trajectories(fs::File::create(dir.join("trajectories.csv"))?, &run.trajectories)?;
    write_changes(fs::File::create(dir.join("changes.csv"))?, &run.changes)?;
    write_detections(fs::File::create(dir.join("detections.csv"))?, &run.detections)?;
    fs::write(dir.join("map_final.txt"), run.final_map.render_text())?;
    fs::write(dir.join("trajectories.svg"), render_svg(&run.final_map, &run.trajectories, &run.failures)?)?;
    if !run.snapshots.is_empty() {
        let snaps = dir.join("snapshots");
        fs::create_dir_all(&snaps)?;
        for (tick, text) in &run.snapshots {
            fs::write(snaps.join(format!("map_{tick:06}.txt")), text)?;
        }
    }
    Ok(())
}

const CELL_PX: usize = 10;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#637939",
];

fn fill(state: CellState) -> &'static str {
    match state {
        CellState::Unexplored => "#c8c8c8",
        CellState::Explored => "#ffffff",
        CellState::Obstacle => "#303030",
        CellState::Forbidden => "#e8a0a0",
    }
}

/// Cell centre in SVG pixels; row 0 of the grid is drawn at the bottom.
fn px(map: &GridMap, x: f64, y: f64) -> (f64, f64) {
    let s = CELL_PX as f64 / map.epsilon();
    (x * s, map.height() as f64 * CELL_PX as f64 - y * s)
}

/// SVG with the map's cell states, one polyline per robot, failure crosses
/// and target markers (filled when found).
pub fn render_svg(
    map: &GridMap,
    trajectories: &[TrajectoryRow],
    failures: &[FailureMark],
) -> Result<String, ReportError> {
    let (width, height) = (map.width(), map.height());
    let outside = |x: usize, y: usize| ReportError::GridMismatch { x, y, width, height };
    if let Some(r) = trajectories.iter().find(|r| !map.in_grid(r.cell)) {
        return Err(outside(r.cell.x, r.cell.y));
    }
    if let Some(f) = failures.iter().find(|f| !map.in_grid(f.cell)) {
        return Err(outside(f.cell.x, f.cell.y));
    }
    let (wp, hp) = (width * CELL_PX, height * CELL_PX);
    let mut s = String::new();
    let _ =
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{wp}" height="{hp}" viewBox="0 0 {wp} {hp}">"#);
    let _ = writeln!(s, r#"<g id="cells" stroke="none">"#);
    for y in 0..height {
        for x in 0..width {
            let state = map.state(crate::world::Cell::new(x, y));
            let top = (height - 1 - y) * CELL_PX;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{top}" width="{CELL_PX}" height="{CELL_PX}" fill="{}"/>"#,
                x * CELL_PX,
                fill(state)
            );
        }
    }
    let _ = writeln!(s, "</g>");

    let mut robots: Vec<usize> = trajectories.iter().map(|r| r.robot).collect();
    robots.sort_unstable();
    robots.dedup();
    let _ = writeln!(s, r#"<g id="trajectories" fill="none" stroke-width="1.5">"#);
    for (k, id) in robots.iter().enumerate() {
        let points: Vec<String> = trajectories
            .iter()
            .filter(|r| r.robot == *id)
            .map(|r| {
                let (x, y) = px(map, r.x_m, r.y_m);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="robot" data-robot="{id}" stroke="{}" points="{}"/>"#,
            PALETTE[k % PALETTE.len()],
            points.join(" ")
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g id="targets">"#);
    for t in map.targets() {
        let (cx, cy) = map.cell_center_m(t.cell);
        let (x, y) = px(map, cx, cy);
        let fill = if t.discovered { "#2ca02c" } else { "none" };
        let _ =
            writeln!(s, r##"<circle class="target" cx="{x:.2}" cy="{y:.2}" r="3" fill="{fill}" stroke="#2ca02c"/>"##);
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r##"<g id="failures" stroke="#d00000" stroke-width="2">"##);
    for f in failures {
        let (cx, cy) = map.cell_center_m(f.cell);
        let (x, y) = px(map, cx, cy);
        let d = CELL_PX as f64 * 0.6;
        let _ = writeln!(
            s,
            r#"<path class="failure" data-robot="{}" d="M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}"/>"#,
            f.robot,
            x - d,
            y - d,
            x + d,
            y + d,
            x - d,
            y + d,
            x + d,
            y - d
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

/// Header for per-step ToTD columns (`totd_10` .. `totd_100`).
pub fn totd_header() -> Vec<String> {
    (1..=TOTD_STEPS).map(|k| format!("totd_{}", k * 10)).collect()
}
