//! Expert trajectories: recording, the on-disk dataset format and window
//! sampling for training.

mod format;
mod window;

pub use format::{read_dataset, write_dataset, DatasetReader, DatasetWriter, DATASET_MAGIC, DATASET_VERSION};
pub use window::{build_window, sample_windows, Dataset, TrainingWindow, WindowIndex};

use thiserror::Error;

use crate::action::ActionId;
use crate::arena::{ArenaError, Outcome, ScenarioConfig, Team, Unit, WorldState};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a dataset file")]
    BadMagic,
    #[error("dataset version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum failure in {0}")]
    Checksum(String),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error("replay diverged at step {step}: {msg}")]
    Replay { step: usize, msg: String },
    #[error("dataset has no windows")]
    Empty,
}

/// One recorded timestep: the state before acting and what everyone did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// Pre-action unit states; the count `N_t` may grow through insertion.
    pub units: Vec<Unit>,
    /// Joint action, one per unit (dead units: no-op).
    pub actions: Vec<ActionId>,
    /// Row-major `N_t × (K_intr + N_t)` availability.
    pub availability: Vec<bool>,
    /// Row-major `N_t × N_t`; entry `(i, j)` says whether `i` sees `j`.
    pub visibility: Vec<bool>,
}

impl StepRecord {
    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn available(&self, i: usize) -> &[bool] {
        let w = crate::action::K_INTR + self.n();
        &self.availability[i * w..(i + 1) * w]
    }

    pub fn visible(&self, i: usize) -> Vec<usize> {
        let n = self.n();
        (0..n).filter(|&j| self.visibility[i * n + j]).collect()
    }

    /// Snapshot of the current world (actions left empty).
    pub fn observe(w: &WorldState) -> Self {
        let n = w.n_units();
        let availability = (0..n).flat_map(|i| w.available_actions(i)).collect();
        let vis = w.visibility();
        let mut visibility = vec![false; n * n];
        for (i, set) in vis.iter().enumerate() {
            for &j in set {
                visibility[i * n + j] = true;
            }
        }
        StepRecord { units: w.units().to_vec(), actions: Vec::new(), availability, visibility }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub scenario: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    /// Normalised to `[0, 20]`; metadata only, never used for training.
    pub episode_return: f64,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Episode return: damage dealt to enemies, 10 per enemy kill and 200 for
/// a win, scaled so the maximum is 20.
pub struct ReturnMeter {
    scale: f64,
    total: f64,
}

impl ReturnMeter {
    pub fn new(w: &WorldState) -> Self {
        let enemies: Vec<usize> = (0..w.n_units()).filter(|&i| w.unit(i).team == Team::Enemy).collect();
        let hp: u32 = enemies.iter().map(|&i| w.stats(i).max_hp).sum();
        ReturnMeter { scale: 20.0 / (hp as f64 + 10.0 * enemies.len() as f64 + 200.0), total: 0.0 }
    }

    pub fn add(&mut self, w: &WorldState, events: &crate::arena::StepEvents) {
        for (i, d) in events.damage.iter().enumerate() {
            if w.unit(i).team == Team::Enemy {
                self.total += *d as f64;
            }
        }
        self.total += 10.0 * events.deaths.iter().filter(|&&i| w.unit(i).team == Team::Enemy).count() as f64;
    }

    pub fn finish(self, outcome: Outcome) -> f64 {
        let bonus = if outcome == Outcome::Win { 200.0 } else { 0.0 };
        ((self.total + bonus) * self.scale).min(20.0)
    }
}

/// Rolls one episode of `cfg` (seeded by `cfg.seed`): `ally` picks each
/// living controllable unit's action, the noisy built-in AI drives enemies.
pub fn record_episode<F>(cfg: &ScenarioConfig, mut ally: F) -> Result<EpisodeRecord, DataError>
where
    F: FnMut(&WorldState, usize) -> ActionId,
{
    let mut w = WorldState::reset(cfg)?;
    let mut meter = ReturnMeter::new(&w);
    let mut steps = Vec::new();
    while w.terminal() == Outcome::Ongoing {
        let mut rec = StepRecord::observe(&w);
        let mut joint = Vec::with_capacity(w.n_units());
        for i in 0..w.n_units() {
            let a = if !w.unit(i).alive {
                ActionId::NOOP
            } else if w.unit(i).team == Team::Ally {
                ally(&w, i)
            } else {
                crate::arena::noisy_enemy_action(&mut w, i)
            };
            joint.push(a);
        }
        let events = w.step(&joint)?;
        meter.add(&w, &events);
        rec.actions = joint;
        steps.push(rec);
    }
    let outcome = w.terminal();
    Ok(EpisodeRecord {
        scenario: cfg.id.clone(),
        seed: cfg.seed,
        steps,
        outcome,
        episode_return: meter.finish(outcome),
    })
}

/// Re-simulates `ep` from its seed with the logged joint actions and checks
/// every logged state, availability row and action against the replay.
pub fn replay_validate(cfg: &ScenarioConfig, ep: &EpisodeRecord) -> Result<(), DataError> {
    let mut w = WorldState::reset(&cfg.with_seed(ep.seed))?;
    for (t, step) in ep.steps.iter().enumerate() {
        let fail = |msg: String| DataError::Replay { step: t, msg };
        for u in &step.units[w.n_units().min(step.n())..] {
            w.insert_unit(u.kind, u.team, u.cell())?;
        }
        let now = StepRecord::observe(&w);
        if now.units != step.units {
            return Err(fail("unit states differ".into()));
        }
        if now.availability != step.availability || now.visibility != step.visibility {
            return Err(fail("availability or visibility differs".into()));
        }
        for (i, a) in step.actions.iter().enumerate() {
            if !step.available(i).get(a.index()).copied().unwrap_or(false) {
                return Err(fail(format!("unit {i} logged unavailable action {a}")));
            }
        }
        w.step(&step.actions)?;
    }
    if w.terminal() != ep.outcome {
        return Err(DataError::Replay { step: ep.steps.len(), msg: "outcome differs".into() });
    }
    Ok(())
}
