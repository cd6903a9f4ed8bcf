//! ArenaLite: a deterministic grid micro-battle environment.
//!
//! Units of two teams move on a grid with Chebyshev geometry, attack or
//! heal within range, and see within a sight radius. The ally team is
//! controllable; enemies follow a built-in script.

mod policy;
mod scenario;
pub mod suite;
mod world;

pub use policy::{enemy_policy, expert_policy, expert_policy_with, noisy_enemy_action};
pub use scenario::{ScenarioConfig, StatsTable, UnitSpawn, UnitStats, UnitType, SCENARIO_SCHEMA_VERSION};
pub use world::{chebyshev, feature, manhattan, unit_features, Outcome, StepEvents, Team, Unit, WorldState, D_STATE};

use thiserror::Error;

use crate::action::ActionId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArenaError {
    #[error("invalid scenario {id}: {msg}")]
    InvalidConfig { id: String, msg: String },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("joint action has {got} entries for {expected} units")]
    JointActionLength { expected: usize, got: usize },
    #[error("action {action} is not available to unit {unit} at step {t}")]
    UnavailableAction { unit: usize, action: ActionId, t: usize },
    #[error("cell ({x},{y}) is occupied or out of bounds")]
    CellUnavailable { x: i32, y: i32 },
}
