//! Execution: turning a history of observations into a joint action under
//! centralized or decentralized attention, rollouts against the scripted
//! enemy, win-rate reports, the downstream protocols and the fixed-head
//! per-agent baseline.

pub mod madt;
mod report;
mod rollout;

pub use report::{mean_std, summary_table, write_reports, write_series, EvalReport};
pub use rollout::{
    eval_seed, evaluate, intervention_step, run_adhoc_teamplay, run_ally_malfunction, run_episode, run_varied_policies, Controller,
    EpisodeResult, Intervention, Rollout,
};

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionId, K_INTR};
use crate::arena::{ArenaError, ScenarioConfig, Team};
use crate::data::{build_window, DataError, StepRecord, TrainingWindow};
use crate::masks::{build_base_mask, build_local_mask, MaskError};
use crate::model::{infer, select_action, GarLogits, ModelError, Params, Selection, TokenInput};
use crate::numeric::Tensor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("{n} units exceed the baseline's {max} slots")]
    TooManyUnits { n: usize, max: usize },
    #[error("empty history")]
    EmptyHistory,
    #[error("report i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecutionMode {
    /// Every token sees every earlier-or-current token.
    Centralized,
    /// One forward per agent over only the tokens it could see.
    DecentralizedStrict,
    /// One forward under the locality mask; with several blocks information
    /// can still travel through intermediate tokens.
    DecentralizedFast,
}

impl ExecutionMode {
    pub const ALL: [ExecutionMode; 3] =
        [ExecutionMode::Centralized, ExecutionMode::DecentralizedStrict, ExecutionMode::DecentralizedFast];

    pub fn is_decentralized(self) -> bool {
        self != ExecutionMode::Centralized
    }
}

impl fmt::Display for ExecutionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecutionMode::Centralized => "central",
            ExecutionMode::DecentralizedStrict => "strict",
            ExecutionMode::DecentralizedFast => "fast",
        })
    }
}

impl FromStr for ExecutionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "central" | "centralized" => Ok(ExecutionMode::Centralized),
            "strict" => Ok(ExecutionMode::DecentralizedStrict),
            "fast" => Ok(ExecutionMode::DecentralizedFast),
            _ => Err(format!("execution mode {s:?}: expected central, strict or fast")),
        }
    }
}

/// The last `l` records of `history` as an unlabelled window.
pub fn live_window(cfg: &ScenarioConfig, history: &[StepRecord], l: usize) -> Result<TrainingWindow, EvalError> {
    if history.is_empty() {
        return Err(EvalError::EmptyHistory);
    }
    let start = history.len().saturating_sub(l);
    let recent = &history[start..];
    Ok(build_window(cfg, recent, recent.len() - 1, l, false)?)
}

/// Living ally units of the newest record.
pub fn living_allies(rec: &StepRecord) -> Vec<usize> {
    (0..rec.n()).filter(|&u| rec.units[u].alive && rec.units[u].team == Team::Ally).collect()
}

fn logits_for(row: &[f64], n: usize, avail: &[bool]) -> Result<GarLogits, EvalError> {
    debug_assert_eq!(row.len(), K_INTR + n);
    Ok(GarLogits::from_row(row, K_INTR, avail.to_vec())?)
}

/// Availability of agent `i` at the newest step; decentralized agents
/// additionally cannot target units they do not see.
fn agent_availability(rec: &StepRecord, i: usize, decentralized: bool) -> Vec<bool> {
    let mut avail = rec.available(i).to_vec();
    if decentralized {
        let n = rec.n();
        for j in 0..n {
            if !rec.visibility[i * n + j] {
                avail[K_INTR + j] = false;
            }
        }
    }
    avail
}

/// One forward over every token of the window; rows of the newest step.
fn single_pass(params: &Params, w: &TrainingWindow, local: bool) -> Result<Tensor, EvalError> {
    let (l, n) = (w.l, w.n);
    let mut mask = if local { build_local_mask(&w.visibility, l, n)? } else { build_base_mask(l, n)? };
    mask.apply_presence(&w.present);
    let query: Vec<usize> = ((l - 1) * n..l * n).collect();
    Ok(infer(params, &w.input(), mask.allow(), Some(&query), n)?)
}

/// Tokens agent `i` may read: present tokens of units in its visibility
/// set at their own timestep.
pub fn visible_tokens(w: &TrainingWindow, i: usize) -> Vec<usize> {
    (0..w.tokens()).filter(|&tok| w.present[tok] && w.visibility.sees(tok / w.n, i, tok % w.n)).collect()
}

/// Forward over a token subset; returns the newest-step units of the subset
/// and their combined logits (`m × (K_intr + m)`).
fn subset_pass(params: &Params, w: &TrainingWindow, subset: &[usize]) -> Result<(Vec<usize>, Tensor), EvalError> {
    let (l, n) = (w.l, w.n);
    let local = build_local_mask(&w.visibility, l, n)?;
    let allow = local.restrict(subset);
    let d = w.states.rows_cols().1;
    let mut states = Vec::with_capacity(subset.len() * d);
    for &tok in subset {
        states.extend_from_slice(w.states.row(tok));
    }
    let input = TokenInput {
        states: Tensor::new(vec![subset.len(), d], states).map_err(ModelError::from)?,
        steps: subset.iter().map(|&tok| tok / n).collect(),
    };
    let query: Vec<usize> = (0..subset.len()).filter(|&k| subset[k] / n == l - 1).collect();
    let units: Vec<usize> = query.iter().map(|&k| subset[k] % n).collect();
    let out = infer(params, &input, &allow, Some(&query), query.len())?;
    Ok((units, out))
}

/// Per-agent logits for `agents` (all living allies when `None`) at the
/// newest step of `history`. Entry `u` is `Some` for requested living allies.
pub fn agent_logits(
    params: &Params,
    cfg: &ScenarioConfig,
    history: &[StepRecord],
    mode: ExecutionMode,
    agents: Option<&[usize]>,
) -> Result<Vec<Option<GarLogits>>, EvalError> {
    let l = params.config().context;
    let w = live_window(cfg, history, l)?;
    let rec = history.last().expect("window built");
    let n = rec.n();
    let living = living_allies(rec);
    let wanted: Vec<usize> = match agents {
        Some(a) => a.iter().copied().filter(|u| living.contains(u)).collect(),
        None => living,
    };
    let mut out = vec![None; n];
    if wanted.is_empty() {
        return Ok(out);
    }
    match mode {
        ExecutionMode::Centralized | ExecutionMode::DecentralizedFast => {
            let local = mode == ExecutionMode::DecentralizedFast;
            let rows = single_pass(params, &w, local)?;
            for &i in &wanted {
                out[i] = Some(logits_for(rows.row(i), n, &agent_availability(rec, i, local))?);
            }
        }
        ExecutionMode::DecentralizedStrict => {
            // agents with the same visible history share one forward
            let mut cache: HashMap<Vec<usize>, (Vec<usize>, Tensor)> = HashMap::new();
            for &i in &wanted {
                let subset = visible_tokens(&w, i);
                if !cache.contains_key(&subset) {
                    let pass = subset_pass(params, &w, &subset)?;
                    cache.insert(subset.clone(), pass);
                }
                let (units, rows) = &cache[&subset];
                let r = units.iter().position(|&u| u == i).expect("an agent always sees itself");
                let row = rows.row(r);
                let mut full = vec![0.0; K_INTR + n];
                full[..K_INTR].copy_from_slice(&row[..K_INTR]);
                for (k, &j) in units.iter().enumerate() {
                    full[K_INTR + j] = row[K_INTR + k];
                }
                let mut avail = agent_availability(rec, i, true);
                for j in 0..n {
                    if !units.contains(&j) {
                        avail[K_INTR + j] = false;
                    }
                }
                out[i] = Some(logits_for(&full, n, &avail)?);
            }
        }
    }
    Ok(out)
}

/// Greedy joint action: argmax per living ally; every other unit gets a
/// no-op (enemies are filled in by the environment driver).
pub fn joint_action(logits: &[Option<GarLogits>]) -> Result<Vec<ActionId>, EvalError> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    logits
        .iter()
        .map(|l| match l {
            Some(l) => Ok(select_action(l, Selection::Argmax, &mut rng)?),
            None => Ok(ActionId::NOOP),
        })
        .collect()
}

pub fn act_centralized(params: &Params, cfg: &ScenarioConfig, history: &[StepRecord]) -> Result<Vec<ActionId>, EvalError> {
    joint_action(&agent_logits(params, cfg, history, ExecutionMode::Centralized, None)?)
}

pub fn act_decentralized_strict(
    params: &Params,
    cfg: &ScenarioConfig,
    history: &[StepRecord],
) -> Result<Vec<ActionId>, EvalError> {
    joint_action(&agent_logits(params, cfg, history, ExecutionMode::DecentralizedStrict, None)?)
}

pub fn act_decentralized_fast(
    params: &Params,
    cfg: &ScenarioConfig,
    history: &[StepRecord],
) -> Result<Vec<ActionId>, EvalError> {
    joint_action(&agent_logits(params, cfg, history, ExecutionMode::DecentralizedFast, None)?)
}

#[cfg(test)]
mod tests;
