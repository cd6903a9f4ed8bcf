use std::collections::HashMap;

use rand::Rng;

use super::{DataError, EpisodeRecord, StepRecord};
use crate::action::K_INTR;
use crate::arena::{unit_features, ScenarioConfig, Team, D_STATE};
use crate::masks::VisibilitySet;
use crate::model::TokenInput;
use crate::numeric::Tensor;

/// `L` consecutive steps of one episode as `L·N` tokens, token `(t, u)` at
/// row `t·N + u`. `N` is the unit count at the last step; tokens of left
/// padding and of units not yet inserted are absent: zero features, no
/// target, visible only to themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingWindow {
    pub l: usize,
    pub n: usize,
    /// Number of leading padded timesteps.
    pub pad: usize,
    /// `[L·N × D_STATE]`.
    pub states: Tensor,
    pub present: Vec<bool>,
    /// Expert action per token; `None` for absent tokens, enemies and dead
    /// allies.
    pub targets: Vec<Option<usize>>,
    /// `L·N × (K_intr + N)` availability rows (all false where no target).
    pub availability: Vec<bool>,
    pub visibility: VisibilitySet,
}

impl TrainingWindow {
    pub fn tokens(&self) -> usize {
        self.l * self.n
    }

    pub fn width(&self) -> usize {
        K_INTR + self.n
    }

    /// Encoder input; tokens carry their slot index as relative step.
    pub fn input(&self) -> TokenInput {
        TokenInput { states: self.states.clone(), steps: (0..self.tokens()).map(|k| k / self.n).collect() }
    }

    /// Tokens that carry a loss term.
    pub fn labelled(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}

/// Window of length `l` ending at `steps[end]` (inclusive). Without
/// `with_targets` every target is `None` (inference on a live history).
pub fn build_window(
    cfg: &ScenarioConfig,
    steps: &[StepRecord],
    end: usize,
    l: usize,
    with_targets: bool,
) -> Result<TrainingWindow, DataError> {
    if l == 0 || end >= steps.len() {
        return Err(DataError::Format(format!("window end {end} of {} steps, length {l}", steps.len())));
    }
    let n = steps[end].n();
    let width = K_INTR + n;
    let pad = (l - 1).saturating_sub(end);
    let mut states = vec![0.0; l * n * D_STATE];
    let mut present = vec![false; l * n];
    let mut targets = vec![None; l * n];
    let mut availability = vec![false; l * n * width];
    let mut sets = vec![vec![Vec::new(); n]; l];
    for slot in 0..l {
        let rec = (slot >= pad).then(|| &steps[end + 1 + slot - l]);
        for u in 0..n {
            let tok = slot * n + u;
            let Some(rec) = rec.filter(|r| u < r.n()) else {
                sets[slot][u] = vec![u];
                continue;
            };
            if rec.n() > n {
                return Err(DataError::Format("unit count shrinks inside an episode".into()));
            }
            let unit = &rec.units[u];
            let stats = cfg
                .stats
                .get(unit.kind)
                .ok_or_else(|| DataError::Format(format!("no stats for {:?}", unit.kind)))?;
            states[tok * D_STATE..(tok + 1) * D_STATE]
                .copy_from_slice(&unit_features(unit, stats, cfg.width, cfg.height));
            present[tok] = true;
            sets[slot][u] = rec.visible(u);
            if with_targets && unit.alive && unit.team == Team::Ally {
                let a = rec
                    .actions
                    .get(u)
                    .ok_or_else(|| DataError::Format(format!("step without action for unit {u}")))?;
                targets[tok] = Some(a.index());
                let avail = rec.available(u);
                let row = &mut availability[tok * width..(tok + 1) * width];
                // interactive slots of units beyond N_t stay unavailable
                row[..K_INTR + rec.n()].copy_from_slice(avail);
            }
        }
    }
    Ok(TrainingWindow {
        l,
        n,
        pad,
        states: Tensor::new(vec![l * n, D_STATE], states).map_err(|e| DataError::Format(e.to_string()))?,
        present,
        targets,
        availability,
        visibility: VisibilitySet::new(sets),
    })
}

/// Prefix sums over episode lengths: maps a uniform draw over all
/// `(episode, end step)` pairs back to the pair.
#[derive(Clone, Debug, Default)]
pub struct WindowIndex {
    ends: Vec<usize>,
}

impl WindowIndex {
    pub fn new(episodes: &[EpisodeRecord]) -> Self {
        let mut total = 0;
        let ends = episodes
            .iter()
            .map(|e| {
                total += e.len();
                total
            })
            .collect();
        WindowIndex { ends }
    }

    pub fn total(&self) -> usize {
        self.ends.last().copied().unwrap_or(0)
    }

    /// `(episode, step)` of the `k`-th pair.
    pub fn locate(&self, k: usize) -> (usize, usize) {
        let e = self.ends.partition_point(|&end| end <= k);
        let start = if e == 0 { 0 } else { self.ends[e - 1] };
        (e, k - start)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(usize, usize)> {
        let total = self.total();
        (total > 0).then(|| self.locate(rng.gen_range(0..total)))
    }
}

/// Episodes plus the scenarios they were recorded on.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub scenarios: Vec<ScenarioConfig>,
    pub episodes: Vec<EpisodeRecord>,
    index: WindowIndex,
    by_id: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(scenarios: Vec<ScenarioConfig>, episodes: Vec<EpisodeRecord>) -> Result<Self, DataError> {
        let by_id: HashMap<String, usize> = scenarios.iter().enumerate().map(|(k, s)| (s.id.clone(), k)).collect();
        if let Some(e) = episodes.iter().find(|e| !by_id.contains_key(&e.scenario)) {
            return Err(DataError::Format(format!("episode of unknown scenario {}", e.scenario)));
        }
        let index = WindowIndex::new(&episodes);
        Ok(Dataset { scenarios, episodes, index, by_id })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DataError> {
        let (s, e) = super::read_dataset(path)?;
        Self::new(s, e)
    }

    pub fn scenario(&self, id: &str) -> Option<&ScenarioConfig> {
        self.by_id.get(id).map(|&k| &self.scenarios[k])
    }

    pub fn index(&self) -> &WindowIndex {
        &self.index
    }

    /// Keeps only episodes of the listed scenarios.
    pub fn restrict(&self, ids: &[&str]) -> Result<Self, DataError> {
        let scenarios: Vec<ScenarioConfig> = self.scenarios.iter().filter(|s| ids.contains(&s.id.as_str())).cloned().collect();
        let episodes = self.episodes.iter().filter(|e| ids.contains(&e.scenario.as_str())).cloned().collect();
        Self::new(scenarios, episodes)
    }

    pub fn window(&self, episode: usize, end: usize, l: usize) -> Result<TrainingWindow, DataError> {
        let ep = &self.episodes[episode];
        let cfg = self.scenario(&ep.scenario).expect("checked in Dataset::new");
        build_window(cfg, &ep.steps, end, l, true)
    }
}

/// `b` windows drawn uniformly over `(episode, end step)` pairs. Windows
/// may differ in `N`; callers process them per sample.
pub fn sample_windows<R: Rng + ?Sized>(
    dataset: &Dataset,
    b: usize,
    l: usize,
    rng: &mut R,
) -> Result<Vec<TrainingWindow>, DataError> {
    (0..b)
        .map(|_| {
            let (e, t) = dataset.index.sample(rng).ok_or(DataError::Empty)?;
            dataset.window(e, t, l)
        })
        .collect()
}
