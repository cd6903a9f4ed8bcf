use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{ScenarioConfig, UnitStats, UnitType};
use super::ArenaError;
use crate::action::{ActionId, ActionKind, K_INTR};

/// Width of the per-unit state vector.
pub const D_STATE: usize = 17;

/// Offsets into the per-unit state vector.
pub mod feature {
    pub const ALLY: usize = 0;
    pub const ALIVE: usize = 1;
    pub const TYPE: usize = 2;
    pub const POS_X: usize = 6;
    pub const POS_Y: usize = 7;
    pub const HEALTH: usize = 8;
    pub const COOLDOWN: usize = 9;
    pub const LAST_INTRINSIC: usize = 10;
    pub const LAST_INTERACTIVE: usize = 16;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Team {
    Ally,
    Enemy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Ongoing,
    Win,
    Loss,
    Draw,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Unit {
    pub kind: UnitType,
    pub team: Team,
    pub x: i32,
    pub y: i32,
    pub hp: u32,
    pub cooldown: u32,
    pub alive: bool,
    pub last_action: Option<ActionId>,
}

impl Unit {
    pub fn cell(&self) -> (i32, i32) {
        (self.x, self.y)
    }
}

/// What happened during one [`WorldState::step`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepEvents {
    /// Damage received per unit.
    pub damage: Vec<u32>,
    /// Healing received per unit (before clamping to max hp).
    pub healing: Vec<u32>,
    /// Units that died this step.
    pub deaths: Vec<usize>,
    /// Units whose move was converted into a stop.
    pub blocked: Vec<usize>,
}

/// State features of one unit on a `width × height` grid. Dead units keep
/// only their team flag and type.
pub fn unit_features(u: &Unit, stats: &UnitStats, width: i32, height: i32) -> [f64; D_STATE] {
    let mut s = [0.0; D_STATE];
    s[feature::ALLY] = (u.team == Team::Ally) as u8 as f64;
    s[feature::TYPE + u.kind.one_hot_index()] = 1.0;
    if !u.alive {
        return s;
    }
    let norm = |v: i32, extent: i32| if extent > 1 { v as f64 / (extent - 1) as f64 } else { 0.0 };
    s[feature::ALIVE] = 1.0;
    s[feature::POS_X] = norm(u.x, width);
    s[feature::POS_Y] = norm(u.y, height);
    s[feature::HEALTH] = u.hp as f64 / stats.max_hp as f64;
    if stats.cooldown > 0 {
        s[feature::COOLDOWN] = u.cooldown as f64 / stats.cooldown as f64;
    }
    match u.last_action {
        Some(a) if a.is_interactive() => s[feature::LAST_INTERACTIVE] = 1.0,
        Some(a) => s[feature::LAST_INTRINSIC + a.index()] = 1.0,
        None => {}
    }
    s
}

pub fn chebyshev(a: (i32, i32), b: (i32, i32)) -> u32 {
    (a.0 - b.0).unsigned_abs().max((a.1 - b.1).unsigned_abs())
}

pub fn manhattan(a: (i32, i32), b: (i32, i32)) -> u32 {
    (a.0 - b.0).unsigned_abs() + (a.1 - b.1).unsigned_abs()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    cfg: Arc<ScenarioConfig>,
    units: Vec<Unit>,
    t: usize,
    rng: ChaCha8Rng,
}

impl WorldState {
    /// Places every unit at (a jittered copy of) its spawn cell with full hp.
    pub fn reset(cfg: &ScenarioConfig) -> Result<Self, ArenaError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut units: Vec<Unit> = Vec::with_capacity(cfg.unit_count());
        let spawns = cfg
            .allies
            .iter()
            .map(|s| (s, Team::Ally))
            .chain(cfg.enemies.iter().map(|s| (s, Team::Enemy)));
        for (spawn, team) in spawns {
            let anchor = (spawn.cell[0], spawn.cell[1]);
            let taken = |c: (i32, i32), units: &[Unit]| units.iter().any(|u| u.cell() == c);
            let mut cell = None;
            let mut radius = cfg.spawn_jitter as i32;
            while cell.is_none() {
                let mut candidates = Vec::new();
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let c = (anchor.0 + dx, anchor.1 + dy);
                        if c.0 >= 0 && c.1 >= 0 && c.0 < cfg.width && c.1 < cfg.height && !taken(c, &units) {
                            candidates.push(c);
                        }
                    }
                }
                cell = candidates.choose(&mut rng).copied();
                if radius > cfg.width.max(cfg.height) {
                    return Err(ArenaError::InvalidConfig { id: cfg.id.clone(), msg: "grid too small for all units".into() });
                }
                radius += 1;
            }
            let (x, y) = cell.expect("loop exits with a cell");
            let stats = cfg.stats.get(spawn.kind).expect("validated");
            units.push(Unit {
                kind: spawn.kind,
                team,
                x,
                y,
                hp: stats.max_hp,
                cooldown: 0,
                alive: true,
                last_action: None,
            });
        }
        Ok(Self { cfg: Arc::new(cfg.clone()), units, t: 0, rng })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn unit(&self, i: usize) -> &Unit {
        &self.units[i]
    }

    #[cfg(test)]
    pub(crate) fn unit_mut(&mut self, i: usize) -> &mut Unit {
        &mut self.units[i]
    }

    #[cfg(test)]
    pub(crate) fn set_t(&mut self, t: usize) {
        self.t = t;
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn stats(&self, i: usize) -> &UnitStats {
        self.cfg.stats.get(self.units[i].kind).expect("unit types are validated")
    }

    /// Indices of the controllable (ally) units.
    pub fn controllable(&self) -> Vec<usize> {
        (0..self.units.len()).filter(|&i| self.units[i].team == Team::Ally).collect()
    }

    pub fn in_bounds(&self, c: (i32, i32)) -> bool {
        c.0 >= 0 && c.1 >= 0 && c.0 < self.cfg.width && c.1 < self.cfg.height
    }

    pub fn occupied(&self, c: (i32, i32)) -> bool {
        self.units.iter().any(|u| u.alive && u.cell() == c)
    }

    pub fn distance(&self, i: usize, j: usize) -> u32 {
        chebyshev(self.units[i].cell(), self.units[j].cell())
    }

    /// Whether `j` is alive and within `i`'s sight (a unit always sees itself).
    pub fn can_see(&self, i: usize, j: usize) -> bool {
        i == j || (self.units[i].alive && self.units[j].alive && self.distance(i, j) <= self.stats(i).sight_range)
    }

    /// `p_i = {i} ∪ {j alive within sight of i}`; dead observers see only themselves.
    pub fn visibility(&self) -> Vec<Vec<usize>> {
        let n = self.units.len();
        (0..n).map(|i| (0..n).filter(|&j| self.can_see(i, j)).collect()).collect()
    }

    /// Unlimited sight: every unit (living or dead) is visible to every unit.
    pub fn visibility_full(&self) -> Vec<Vec<usize>> {
        let n = self.units.len();
        vec![(0..n).collect(); n]
    }

    /// Availability over `K_INTR + N` actions for unit `i`.
    pub fn available_actions(&self, i: usize) -> Vec<bool> {
        let n = self.units.len();
        let mut avail = vec![false; K_INTR + n];
        let me = &self.units[i];
        if !me.alive {
            avail[ActionId::NOOP.index()] = true;
            return avail;
        }
        avail[ActionId::STOP.index()] = true;
        for d in crate::action::Direction::ALL {
            let (dx, dy) = d.delta();
            let dest = (me.x + dx, me.y + dy);
            if self.in_bounds(dest) && !self.occupied(dest) {
                avail[ActionId::move_to(d).index()] = true;
            }
        }
        let stats = self.stats(i);
        for j in 0..n {
            let other = &self.units[j];
            if j == i || !other.alive || !self.can_see(i, j) || self.distance(i, j) > stats.attack_range {
                continue;
            }
            let ok = if other.team != me.team {
                stats.damage > 0 && me.cooldown == 0
            } else {
                stats.heal > 0
            };
            avail[K_INTR + j] = ok;
        }
        avail
    }

    /// Advances one step. Every unit needs an action (dead units: no-op).
    ///
    /// Moves resolve in ascending unit index (a blocked move becomes a stop);
    /// attacks and heals are computed from the pre-step snapshot and applied
    /// simultaneously; then hp is clamped and deaths applied.
    pub fn step(&mut self, joint: &[ActionId]) -> Result<StepEvents, ArenaError> {
        let n = self.units.len();
        if joint.len() != n {
            return Err(ArenaError::JointActionLength { expected: n, got: joint.len() });
        }
        for (i, a) in joint.iter().enumerate() {
            let avail = self.available_actions(i);
            if !avail.get(a.index()).copied().unwrap_or(false) {
                return Err(ArenaError::UnavailableAction { unit: i, action: *a, t: self.t });
            }
        }
        let snapshot = self.units.clone();
        let mut events = StepEvents { damage: vec![0; n], healing: vec![0; n], ..Default::default() };
        let mut effective = joint.to_vec();

        for i in 0..n {
            if let ActionKind::Move(d) = joint[i].kind() {
                let (dx, dy) = d.delta();
                let dest = (self.units[i].x + dx, self.units[i].y + dy);
                if self.occupied(dest) {
                    effective[i] = ActionId::STOP;
                    events.blocked.push(i);
                } else {
                    self.units[i].x = dest.0;
                    self.units[i].y = dest.1;
                }
            }
        }

        let mut acted = vec![false; n];
        for i in 0..n {
            if let ActionKind::Target(j) = joint[i].kind() {
                let stats = self.cfg.stats.get(snapshot[i].kind).expect("validated");
                if snapshot[j].team != snapshot[i].team {
                    events.damage[j] += stats.damage;
                } else {
                    events.healing[j] += stats.heal;
                }
                acted[i] = true;
            }
        }
        for i in 0..n {
            let max_cd = self.stats(i).cooldown;
            let max_hp = self.stats(i).max_hp as i64;
            let u = &mut self.units[i];
            if acted[i] {
                u.cooldown = max_cd;
            } else {
                u.cooldown = u.cooldown.saturating_sub(1);
            }
            if u.alive {
                let hp = (u.hp as i64 + events.healing[i] as i64 - events.damage[i] as i64).clamp(0, max_hp);
                u.hp = hp as u32;
                u.last_action = Some(effective[i]);
                if u.hp == 0 {
                    u.alive = false;
                    u.cooldown = 0;
                    events.deaths.push(i);
                }
            }
        }
        self.t += 1;
        Ok(events)
    }

    pub fn terminal(&self) -> Outcome {
        let allies_alive = self.units.iter().any(|u| u.alive && u.team == Team::Ally);
        let enemies_alive = self.units.iter().any(|u| u.alive && u.team == Team::Enemy);
        match (allies_alive, enemies_alive) {
            (false, _) => Outcome::Loss,
            (true, false) => Outcome::Win,
            (true, true) if self.t >= self.cfg.max_steps => Outcome::Draw,
            _ => Outcome::Ongoing,
        }
    }

    /// Appends a fresh unit at full hp; returns its index.
    pub fn insert_unit(&mut self, kind: UnitType, team: Team, cell: (i32, i32)) -> Result<usize, ArenaError> {
        if !self.in_bounds(cell) || self.occupied(cell) {
            return Err(ArenaError::CellUnavailable { x: cell.0, y: cell.1 });
        }
        let stats = self.cfg.stats.get(kind).ok_or_else(|| ArenaError::InvalidConfig {
            id: self.cfg.id.clone(),
            msg: format!("unit type {kind:?} has no stats"),
        })?;
        self.units.push(Unit {
            kind,
            team,
            x: cell.0,
            y: cell.1,
            hp: stats.max_hp,
            cooldown: 0,
            alive: true,
            last_action: None,
        });
        Ok(self.units.len() - 1)
    }

    /// Free cell closest (Chebyshev, then Manhattan, then row-major) to the
    /// rounded centroid of the living units of `team`.
    pub fn free_cell_near_centroid(&self, team: Team) -> Option<(i32, i32)> {
        let members: Vec<&Unit> = self.units.iter().filter(|u| u.alive && u.team == team).collect();
        if members.is_empty() {
            return None;
        }
        let cx = (members.iter().map(|u| u.x as f64).sum::<f64>() / members.len() as f64).round() as i32;
        let cy = (members.iter().map(|u| u.y as f64).sum::<f64>() / members.len() as f64).round() as i32;
        let mut best: Option<((u32, u32, i32, i32), (i32, i32))> = None;
        for y in 0..self.cfg.height {
            for x in 0..self.cfg.width {
                if self.occupied((x, y)) {
                    continue;
                }
                let key = (chebyshev((x, y), (cx, cy)), manhattan((x, y), (cx, cy)), y, x);
                if best.is_none_or(|(k, _)| key < k) {
                    best = Some((key, (x, y)));
                }
            }
        }
        best.map(|(_, c)| c)
    }

    /// Feature vector of unit `i`; it never encodes another unit.
    pub fn unit_state(&self, i: usize) -> [f64; D_STATE] {
        unit_features(&self.units[i], self.stats(i), self.cfg.width, self.cfg.height)
    }

    /// `N × D_STATE` row-major global state.
    pub fn global_state(&self) -> Vec<f64> {
        (0..self.units.len()).flat_map(|i| self.unit_state(i)).collect()
    }
}
