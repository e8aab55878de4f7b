//! Deterministic simulator for a multi-robot team covering an unknown grid
//! world, with potential-game task reallocation on idling and failures.

pub mod engine;
pub mod game;
pub mod models;
pub mod planner;
pub mod report;
pub mod scenario;
pub mod supervisor;
pub mod world;

pub use engine::{run, run_with, Metrics, RunOptions, RunOutput};
pub use scenario::{ScenarioConfig, Strategy};
