//! Scenario files: JSON schema, defaults and validation.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::BatteryParams;
use crate::world::{Cell, Rect, TargetSpec, WorldError, WorldSpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario schema error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Resilience and no-idling games.
    #[default]
    Care,
    /// Non-cooperative: every robot only covers its own task.
    Nonco,
    /// First responder: idlers pick their own best task, no resilience games.
    Fr,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Care, Strategy::Nonco, Strategy::Fr];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Care => "care",
            Strategy::Nonco => "nonco",
            Strategy::Fr => "fr",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "care" => Ok(Strategy::Care),
            "nonco" | "non-co" => Ok(Strategy::Nonco),
            "fr" => Ok(Strategy::Fr),
            other => Err(ScenarioError::Invalid(format!("unknown strategy `{other}` (expected care, nonco or fr)"))),
        }
    }
}

/// An obstacle rectangle `{x, y, w, h}` or a single cell `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObstacleSpec {
    Rect(Rect),
    Cell([usize; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum TargetsConfig {
    Sampled { lambda: Vec<f64> },
    Explicit { lambda: Vec<f64>, cells: Vec<[usize; 2]> },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    #[serde(default = "one")]
    pub epsilon_m: f64,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    pub tasks: Vec<Rect>,
    pub targets: TargetsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatteryKeyword {
    Sample,
}

/// Fixed `{rho0, rho1}` or `"sample"` for per-robot Gaussian draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatteryConfig {
    Fixed(BatteryParams),
    Keyword(BatteryKeyword),
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig::Fixed(BatteryParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub id: usize,
    pub start: [usize; 2],
    #[serde(default)]
    pub battery: BatteryConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Travel speed (m/s).
    pub u: f64,
    /// Tasking speed (cells/s).
    pub omega: f64,
    pub eta: f64,
    pub gamma: f64,
    pub kappa1: usize,
    pub kappa2: usize,
    pub n_max: usize,
    #[serde(rename = "L")]
    pub cycles: usize,
    pub tau: f64,
    pub heartbeat_s: f64,
    pub t0_s: f64,
    pub sync_every_s: f64,
    pub tick_s: f64,
    pub noise_sigma_m: f64,
    pub sensing_radius_m: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            u: 0.4,
            omega: 0.32,
            eta: 30.0,
            gamma: 200.0,
            kappa1: 6,
            kappa2: 3,
            n_max: 4,
            cycles: 50,
            tau: 0.05,
            heartbeat_s: 5.0,
            t0_s: 15.0,
            sync_every_s: 1.0,
            tick_s: 1.0,
            noise_sigma_m: 0.0,
            sensing_radius_m: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSpec {
    pub robot: usize,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub world: WorldConfig,
    pub robots: Vec<RobotConfig>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub failures: Vec<FailureSpec>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Invalid(msg));
        let p = &self.params;
        let positive = [
            ("u", p.u),
            ("omega", p.omega),
            ("tau", p.tau),
            ("heartbeat_s", p.heartbeat_s),
            ("t0_s", p.t0_s),
            ("sync_every_s", p.sync_every_s),
            ("tick_s", p.tick_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("params.{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("eta", p.eta),
            ("gamma", p.gamma),
            ("noise_sigma_m", p.noise_sigma_m),
            ("sensing_radius_m", p.sensing_radius_m),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("params.{name} must be non-negative, got {v}"));
            }
        }
        if p.n_max == 0 || p.cycles == 0 {
            return bad("params.n_max and params.L must be at least 1".into());
        }
        let mut ids = BTreeSet::new();
        for r in &self.robots {
            if !ids.insert(r.id) {
                return bad(format!("duplicate robot id {}", r.id));
            }
            if let BatteryConfig::Fixed(b) = r.battery {
                BatteryParams::new(b.rho0, b.rho1)
                    .map_err(|e| ScenarioError::Invalid(format!("robot {}: {e}", r.id)))?;
            }
        }
        for f in &self.failures {
            if !ids.contains(&f.robot) {
                return bad(format!("failure references unknown robot {}", f.robot));
            }
            if !(f.time_s >= 0.0 && f.time_s.is_finite()) {
                return bad(format!("failure time for robot {} must be non-negative", f.robot));
            }
        }
        Ok(())
    }

    /// Expanded obstacle cells (rectangles clipped to the grid).
    pub fn obstacle_cells(&self) -> Vec<Cell> {
        let (w, h) = (self.world.width, self.world.height);
        let mut cells = BTreeSet::new();
        for o in &self.world.obstacles {
            match o {
                ObstacleSpec::Rect(r) => {
                    for c in r.cells() {
                        if c.x < w && c.y < h {
                            cells.insert(c);
                        }
                    }
                }
                ObstacleSpec::Cell([x, y]) => {
                    cells.insert(Cell::new(*x, *y));
                }
            }
        }
        cells.into_iter().collect()
    }

    pub fn world_spec(&self) -> WorldSpec {
        let targets = match &self.world.targets {
            TargetsConfig::Sampled { lambda } => TargetSpec::Sampled { lambda: lambda.clone() },
            TargetsConfig::Explicit { lambda, cells } => TargetSpec::Explicit {
                lambda: lambda.clone(),
                cells: cells.iter().map(|[x, y]| Cell::new(*x, *y)).collect(),
            },
        };
        WorldSpec {
            width: self.world.width,
            height: self.world.height,
            epsilon_m: self.world.epsilon_m,
            obstacles: self.obstacle_cells(),
            tasks: self.world.tasks.clone(),
            targets,
            reserved: self.robots.iter().map(|r| Cell::new(r.start[0], r.start[1])).collect(),
        }
    }

    /// Same lambda for every task.
    pub fn set_uniform_lambda(&mut self, value: f64) {
        let lambda = match &mut self.world.targets {
            TargetsConfig::Sampled { lambda } | TargetsConfig::Explicit { lambda, .. } => lambda,
        };
        lambda.iter_mut().for_each(|l| *l = value);
    }

    /// Keeps the first `n` robots in list order and drops failures of the rest.
    pub fn truncate_team(&mut self, n: usize) {
        self.robots.truncate(n);
        let ids: BTreeSet<usize> = self.robots.iter().map(|r| r.id).collect();
        self.failures.retain(|f| ids.contains(&f.robot));
    }
}
