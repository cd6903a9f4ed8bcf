use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ArenaError;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitType {
    Fighter,
    Healer,
    Tank,
    Reserved,
}

impl UnitType {
    /// Position in the state vector's type one-hot.
    pub fn one_hot_index(self) -> usize {
        self as usize
    }

    pub fn short(self) -> char {
        match self {
            UnitType::Fighter => 'f',
            UnitType::Healer => 'h',
            UnitType::Tank => 't',
            UnitType::Reserved => 'r',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitStats {
    pub max_hp: u32,
    pub damage: u32,
    pub heal: u32,
    /// Chebyshev reach of attacks and heals.
    pub attack_range: u32,
    /// Chebyshev sight radius.
    pub sight_range: u32,
    /// Steps an attacker must wait after acting.
    pub cooldown: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsTable {
    pub fighter: UnitStats,
    pub healer: UnitStats,
    pub tank: UnitStats,
}

impl Default for StatsTable {
    fn default() -> Self {
        Self {
            fighter: UnitStats { max_hp: 10, damage: 3, heal: 0, attack_range: 2, sight_range: 6, cooldown: 1 },
            healer: UnitStats { max_hp: 8, damage: 0, heal: 3, attack_range: 3, sight_range: 6, cooldown: 0 },
            tank: UnitStats { max_hp: 20, damage: 2, heal: 0, attack_range: 1, sight_range: 6, cooldown: 1 },
        }
    }
}

impl StatsTable {
    pub fn get(&self, kind: UnitType) -> Option<&UnitStats> {
        match kind {
            UnitType::Fighter => Some(&self.fighter),
            UnitType::Healer => Some(&self.healer),
            UnitType::Tank => Some(&self.tank),
            UnitType::Reserved => None,
        }
    }

    pub fn set_sight(&mut self, sight: u32) {
        self.fighter.sight_range = sight;
        self.healer.sight_range = sight;
        self.tank.sight_range = sight;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSpawn {
    #[serde(rename = "type")]
    pub kind: UnitType,
    pub cell: [i32; 2],
}

fn default_schema() -> u32 {
    SCENARIO_SCHEMA_VERSION
}
fn default_size() -> i32 {
    16
}
fn default_max_steps() -> usize {
    60
}
fn default_jitter() -> u32 {
    1
}

/// Declarative battle description; serialised as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub id: String,
    #[serde(default = "default_size")]
    pub width: i32,
    #[serde(default = "default_size")]
    pub height: i32,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Spawns are displaced by up to this Chebyshev radius, drawn from the seed.
    #[serde(default = "default_jitter")]
    pub spawn_jitter: u32,
    /// Probability that a scripted enemy takes a uniformly random available action.
    #[serde(default)]
    pub enemy_noise: f64,
    #[serde(default)]
    pub stats: StatsTable,
    pub allies: Vec<UnitSpawn>,
    pub enemies: Vec<UnitSpawn>,
}

impl ScenarioConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn unit_count(&self) -> usize {
        self.allies.len() + self.enemies.len()
    }

    pub fn validate(&self) -> Result<(), ArenaError> {
        let invalid = |msg: String| Err(ArenaError::InvalidConfig { id: self.id.clone(), msg });
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return invalid(format!(
                "schema_version {} (expected {})",
                self.schema_version, SCENARIO_SCHEMA_VERSION
            ));
        }
        if self.width <= 0 || self.height <= 0 {
            return invalid(format!("grid {}x{} is empty", self.width, self.height));
        }
        if self.max_steps == 0 {
            return invalid("max_steps must be positive".into());
        }
        if self.allies.is_empty() || self.enemies.is_empty() {
            return invalid("each team needs at least one unit".into());
        }
        if !(0.0..=1.0).contains(&self.enemy_noise) {
            return invalid(format!("enemy_noise {} outside [0, 1]", self.enemy_noise));
        }
        let mut seen = HashSet::new();
        for s in self.allies.iter().chain(&self.enemies) {
            let [x, y] = s.cell;
            if x < 0 || y < 0 || x >= self.width || y >= self.height {
                return invalid(format!("spawn ({x},{y}) out of bounds"));
            }
            if !seen.insert(s.cell) {
                return invalid(format!("spawn ({x},{y}) used twice"));
            }
            if self.stats.get(s.kind).is_none() {
                return invalid(format!("unit type {:?} has no stats", s.kind));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self, ArenaError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ArenaError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ArenaError> {
        let text = std::fs::read_to_string(path).map_err(|e| ArenaError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}
