//! Desk-scale experiment drivers shared by the command line and the
//! acceptance suite: expert data generation behind a win-rate gate, cached
//! training runs, suite evaluation, the three ablation sweeps and the
//! downstream tasks.

mod table;

pub use table::{Cell, Table};

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::{expert_policy, suite, ArenaError, Outcome, ScenarioConfig};
use crate::data::{record_episode, write_dataset, DataError, Dataset, EpisodeRecord};
use crate::eval::{
    evaluate, madt, mean_std, run_adhoc_teamplay, run_ally_malfunction, run_varied_policies, Controller, EvalError,
    EvalReport, ExecutionMode, Rollout,
};
use crate::model::{read_checkpoint, ModelError, Params};
use crate::training::{train, MaskMode, RunOptions, TrainConfig, TrainError, LAST_CHECKPOINT};

pub const EXPERT_GATE: f64 = 0.9;
/// Name of the file a cached run stores its configuration in.
pub const RUN_CONFIG: &str = "train_config.json";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("expert gate failed: {}", .0.iter().map(|r| format!("{} {:.3}", r.scenario, r.win_rate)).collect::<Vec<_>>().join(", "))]
    Gate(Vec<GateRow>),
    #[error("{0}")]
    Config(String),
}

/// Expert win rate on one scenario, measured from the recorded episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub scenario: String,
    pub episodes: usize,
    pub win_rate: f64,
}

impl GateRow {
    pub fn passes(&self) -> bool {
        self.win_rate >= EXPERT_GATE
    }
}

/// Seed of recorded episode `e` of scenario number `k`.
pub fn data_seed(seed: u64, k: usize, e: usize) -> u64 {
    seed.wrapping_mul(0x1_0000_0000) + (k as u64) * 1_000_000 + e as u64
}

/// Records `episodes` expert episodes per scenario.
pub fn record_expert(
    scenarios: &[ScenarioConfig],
    episodes: usize,
    seed: u64,
) -> Result<(Vec<EpisodeRecord>, Vec<GateRow>), ExperimentError> {
    let mut all = Vec::with_capacity(scenarios.len() * episodes);
    let mut gate = Vec::new();
    for (k, cfg) in scenarios.iter().enumerate() {
        cfg.validate()?;
        let eps = (0..episodes)
            .into_par_iter()
            .map(|e| record_episode(&cfg.with_seed(data_seed(seed, k, e)), expert_policy))
            .collect::<Result<Vec<_>, _>>()?;
        let wins = eps.iter().filter(|e| e.outcome == Outcome::Win).count();
        gate.push(GateRow {
            scenario: cfg.id.clone(),
            episodes,
            win_rate: if episodes == 0 { 0.0 } else { wins as f64 / episodes as f64 },
        });
        all.extend(eps);
    }
    Ok((all, gate))
}

/// Records expert data and writes it to `path`, unless a scenario misses the
/// expert gate, in which case nothing is written.
pub fn gen_data(
    scenarios: &[ScenarioConfig],
    episodes: usize,
    seed: u64,
    path: &Path,
) -> Result<Vec<GateRow>, ExperimentError> {
    let (eps, gate) = record_expert(scenarios, episodes, seed)?;
    if gate.iter().any(|r| !r.passes()) {
        return Err(ExperimentError::Gate(gate));
    }
    write_dataset(path, scenarios, &eps)?;
    Ok(gate)
}

/// Trains into `dir`, or reuses a finished run there whose stored
/// configuration matches `cfg`.
pub fn train_or_reuse(dataset: &Dataset, cfg: &TrainConfig, dir: &Path, madt: bool) -> Result<Params, ExperimentError> {
    let stored = dir.join(RUN_CONFIG);
    let last = dir.join(LAST_CHECKPOINT);
    if let (Ok(text), true) = (fs::read_to_string(&stored), last.exists()) {
        if serde_json::from_str::<TrainConfig>(&text).ok().as_ref() == Some(cfg) {
            let ck = read_checkpoint(&last)?;
            if ck.step == cfg.steps {
                return Ok(ck.params()?);
            }
        }
    }
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    let opts = RunOptions { out_dir: Some(dir.to_path_buf()), log_every: 200, ..RunOptions::default() };
    let out = if madt { madt::train_madt(dataset, cfg, opts)? } else { train(dataset, cfg, opts)? };
    // written last: its presence marks a complete run
    fs::write(&stored, serde_json::to_string_pretty(cfg).map_err(std::io::Error::other)?)?;
    Ok(out.params)
}

/// Rollouts per evaluation cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalBudget {
    pub episodes: usize,
    pub seeds: usize,
}

impl Default for EvalBudget {
    fn default() -> Self {
        EvalBudget { episodes: 32, seeds: 4 }
    }
}

/// One report per scenario.
pub fn evaluate_suite(
    controller: Controller<'_>,
    scenarios: &[ScenarioConfig],
    budget: EvalBudget,
) -> Result<Vec<EvalReport>, ExperimentError> {
    scenarios
        .iter()
        .map(|cfg| Ok(evaluate(cfg, &Rollout::new(controller), budget.episodes, budget.seeds)?))
        .collect()
}

/// Suite win rate: per seed, the mean over scenarios; then mean and sample
/// std over seeds.
pub fn suite_cell(reports: &[EvalReport]) -> Cell {
    let seeds = reports.iter().map(|r| r.seeds).min().unwrap_or(0);
    let per_seed: Vec<f64> = (0..seeds)
        .map(|s| reports.iter().map(|r| r.win_rates[s]).sum::<f64>() / reports.len() as f64)
        .collect();
    let (mean, std) = mean_std(&per_seed);
    Cell { mean, std }
}

fn report_cell(r: &EvalReport) -> Cell {
    Cell { mean: r.mean, std: r.std }
}

/// Everything a sweep needs besides the dataset.
#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub base: TrainConfig,
    pub budget: EvalBudget,
    /// Cached runs live in subdirectories of this one.
    pub runs_dir: PathBuf,
    /// Scenarios evaluated in the mask-ratio and timestep sweeps.
    pub train_scenarios: Vec<ScenarioConfig>,
    /// Zero-shot scenarios for the map-count sweep.
    pub held_out: Vec<ScenarioConfig>,
}

impl SweepPlan {
    /// Cache directory of a run: keyed by the configuration, the model kind
    /// and the dataset's scenarios and episodes, so sweeps share identical runs.
    pub fn run_dir(&self, dataset: &Dataset, cfg: &TrainConfig, madt: bool) -> PathBuf {
        let mut h = crc32fast::Hasher::new();
        h.update(serde_json::to_string(cfg).unwrap_or_default().as_bytes());
        h.update(&[madt as u8]);
        for s in &dataset.scenarios {
            h.update(s.to_toml().as_bytes());
        }
        for ep in &dataset.episodes {
            h.update(&ep.seed.to_le_bytes());
            h.update(&(ep.len() as u64).to_le_bytes());
        }
        let kind = if madt { "madt" } else { "maskma" };
        self.runs_dir.join(format!("{kind}-{:08x}", h.finalize()))
    }

    /// Trains (or reuses) the run for `cfg` on `dataset`.
    pub fn train(&self, dataset: &Dataset, cfg: &TrainConfig, madt: bool) -> Result<Params, ExperimentError> {
        train_or_reuse(dataset, cfg, &self.run_dir(dataset, cfg, madt), madt)
    }
}

pub const MASK_SWEEP: [MaskMode; 6] =
    [MaskMode::None, MaskMode::Fixed(0.2), MaskMode::Fixed(0.5), MaskMode::Fixed(0.8), MaskMode::Local, MaskMode::Random];
pub const TIMESTEP_SWEEP: [usize; 4] = [1, 3, 5, 10];
pub const MAP_COUNT_SWEEP: [usize; 4] = [2, 4, 6, 8];

/// Trains one model per mask mode; each is scored centralized and
/// strict-decentralized on the training scenarios.
pub fn ablate_mask_ratio(dataset: &Dataset, plan: &SweepPlan, modes: &[MaskMode]) -> Result<Table, ExperimentError> {
    let mut table = Table::new("mask ratio", "mode", &["centralized", "decentralized"]);
    for &m in modes {
        let cfg = TrainConfig { mask_mode: m, ..plan.base.clone() };
        let params = plan.train(dataset, &cfg, false)?;
        let mut cells = Vec::new();
        for mode in [ExecutionMode::Centralized, ExecutionMode::DecentralizedStrict] {
            let reports = evaluate_suite(Controller::Model { params: &params, mode }, &plan.train_scenarios, plan.budget)?;
            cells.push(suite_cell(&reports));
        }
        table.push(&m.to_string(), cells);
    }
    Ok(table)
}

/// One model per context length, scored strict-decentralized.
pub fn ablate_timestep(dataset: &Dataset, plan: &SweepPlan, lengths: &[usize]) -> Result<Table, ExperimentError> {
    let mut table = Table::new("timestep", "L", &["decentralized"]);
    for &l in lengths {
        let mut cfg = plan.base.clone();
        cfg.model = cfg.model.with_context(l);
        let params = plan.train(dataset, &cfg, false)?;
        let ctrl = Controller::Model { params: &params, mode: ExecutionMode::DecentralizedStrict };
        table.push(&l.to_string(), vec![suite_cell(&evaluate_suite(ctrl, &plan.train_scenarios, plan.budget)?)]);
    }
    Ok(table)
}

/// One model per training-set size (the first `k` training scenarios),
/// scored zero-shot on the same held-out scenarios.
pub fn ablate_map_count(dataset: &Dataset, plan: &SweepPlan, counts: &[usize]) -> Result<Table, ExperimentError> {
    let mut table = Table::new("map count", "maps", &["zero-shot decentralized"]);
    let ids: Vec<&str> = dataset.scenarios.iter().map(|s| s.id.as_str()).collect();
    for &k in counts {
        if k == 0 || k > ids.len() {
            return Err(ExperimentError::Config(format!("map count {k} outside 1..={}", ids.len())));
        }
        let subset = if k == ids.len() { None } else { Some(dataset.restrict(&ids[..k])?) };
        let params = plan.train(subset.as_ref().unwrap_or(dataset), &plan.base, false)?;
        let ctrl = Controller::Model { params: &params, mode: ExecutionMode::DecentralizedStrict };
        table.push(&k.to_string(), vec![suite_cell(&evaluate_suite(ctrl, &plan.held_out, plan.budget)?)]);
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Downstream {
    Collab,
    Malfunction,
    Adhoc,
}

impl std::str::FromStr for Downstream {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "collab" => Ok(Downstream::Collab),
            "malfunction" => Ok(Downstream::Malfunction),
            "adhoc" => Ok(Downstream::Adhoc),
            _ => Err(format!("task {s:?}: expected collab, malfunction or adhoc")),
        }
    }
}

pub const COLLAB_FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const INTERVENTION_TIMES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// Win-rate table of one downstream task on its built-in battle.
pub fn downstream(controller: Controller<'_>, task: Downstream, budget: EvalBudget) -> Result<(Table, Vec<EvalReport>), ExperimentError> {
    let (ep, seeds) = (budget.episodes, budget.seeds);
    let (title, key, rows): (&str, &str, Vec<(String, EvalReport)>) = match task {
        Downstream::Collab => (
            "varied policies collaboration",
            "rho",
            run_varied_policies(controller, &suite::collab_battle(), &COLLAB_FRACTIONS, ep, seeds)?
                .into_iter()
                .map(|(r, rep)| (r.to_string(), rep))
                .collect(),
        ),
        Downstream::Malfunction => (
            "ally malfunction",
            "f",
            run_ally_malfunction(controller, &suite::downstream_battle(), &INTERVENTION_TIMES, ep, seeds)?
                .into_iter()
                .map(|(f, rep)| (f.to_string(), rep))
                .collect(),
        ),
        Downstream::Adhoc => (
            "ad hoc team play",
            "f",
            run_adhoc_teamplay(controller, &suite::adhoc_battle(), &INTERVENTION_TIMES, ep, seeds)?
                .into_iter()
                .map(|(f, rep)| (f.map_or("none".to_string(), |f| f.to_string()), rep))
                .collect(),
        ),
    };
    let mut table = Table::new(title, key, &["win rate"]);
    for (label, rep) in &rows {
        table.push(label, vec![report_cell(rep)]);
    }
    Ok((table, rows.into_iter().map(|r| r.1).collect()))
}
