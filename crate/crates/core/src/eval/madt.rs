//! Fixed-action-space baseline: each agent runs a causal transformer over
//! its own observation history. An observation is the agent's own features
//! followed by those of the units it sees (index order), zero-padded to
//! `N_max` slots; the head scores `K_intr + N_max` actions, where action
//! `K_intr + k` targets the unit in slot `k`.

use rayon::prelude::*;

use super::{living_allies, EvalError};
use crate::action::{ActionId, K_INTR};
use crate::arena::{suite, unit_features, ScenarioConfig, Team, D_STATE};
use crate::data::{DataError, Dataset, StepRecord};
use crate::masks::build_base_mask;
use crate::model::{embed, encode, imitation_loss, intrinsic_head, Bound, ModelConfig, Params, TokenInput};
use crate::numeric::{Graph, Tensor};
use crate::training::{
    collect_grads, count_correct, initial_state, reduce, run_loop, RunOptions, StepMetrics, TrainConfig, TrainError,
    TrainOutcome, WindowPass,
};

/// Largest built-in unit count plus one slot for an inserted ally.
pub fn n_max() -> usize {
    suite::max_units() + 1
}

/// Baseline architecture: same trunk as `base`, one token per timestep.
pub fn madt_config(base: ModelConfig) -> ModelConfig {
    ModelConfig { d_state: n_max() * D_STATE, k_intr: K_INTR + n_max(), ..base }
}

/// Units in slot order for agent `i`: itself, then visible units by index.
pub fn slots(rec: &StepRecord, i: usize) -> Vec<usize> {
    let mut s = vec![i];
    s.extend(rec.visible(i).into_iter().filter(|&j| j != i));
    s
}

fn observation(cfg: &ScenarioConfig, rec: &StepRecord, i: usize, out: &mut [f64]) -> Result<Vec<usize>, EvalError> {
    let max = n_max();
    if rec.n() > max {
        return Err(EvalError::TooManyUnits { n: rec.n(), max });
    }
    let order = slots(rec, i);
    for (k, &j) in order.iter().enumerate() {
        let u = &rec.units[j];
        let stats = cfg.stats.get(u.kind).ok_or_else(|| DataError::Format(format!("no stats for {:?}", u.kind)))?;
        out[k * D_STATE..(k + 1) * D_STATE].copy_from_slice(&unit_features(u, stats, cfg.width, cfg.height));
    }
    Ok(order)
}

/// Agent-centred window of length `l` ending at `steps[end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentWindow {
    pub l: usize,
    /// `[L × N_max·D_STATE]`.
    pub states: Tensor,
    pub present: Vec<bool>,
    pub targets: Vec<Option<usize>>,
    /// `L × (K_intr + N_max)`.
    pub availability: Vec<bool>,
    /// Slot order of the newest step.
    pub last_slots: Vec<usize>,
}

impl AgentWindow {
    pub fn labelled(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}

/// Builds agent `i`'s window; targets need `with_targets` and a logged action.
pub fn agent_window(
    cfg: &ScenarioConfig,
    steps: &[StepRecord],
    end: usize,
    l: usize,
    i: usize,
    with_targets: bool,
) -> Result<AgentWindow, EvalError> {
    let d = n_max() * D_STATE;
    let width = K_INTR + n_max();
    let pad = (l - 1).saturating_sub(end);
    let mut states = vec![0.0; l * d];
    let mut present = vec![false; l];
    let mut targets = vec![None; l];
    let mut availability = vec![false; l * width];
    let mut last_slots = Vec::new();
    for slot in pad..l {
        let rec = &steps[end + 1 + slot - l];
        if i >= rec.n() {
            continue;
        }
        present[slot] = true;
        let order = observation(cfg, rec, i, &mut states[slot * d..(slot + 1) * d])?;
        let me = &rec.units[i];
        if slot == l - 1 {
            last_slots = order.clone();
        }
        if !(with_targets && me.alive && me.team == Team::Ally) {
            continue;
        }
        let avail = rec.available(i);
        let row = &mut availability[slot * width..(slot + 1) * width];
        row[..K_INTR].copy_from_slice(&avail[..K_INTR]);
        for (k, &j) in order.iter().enumerate() {
            row[K_INTR + k] = avail[K_INTR + j];
        }
        let a = rec.actions.get(i).copied().ok_or(EvalError::EmptyHistory)?;
        targets[slot] = if a.is_interactive() {
            // a target outside the agent's view has no slot
            order.iter().position(|&j| ActionId::target(j) == a).map(|k| K_INTR + k)
        } else {
            Some(a.index())
        };
        if targets[slot].is_none() {
            row.iter_mut().for_each(|v| *v = false);
        }
    }
    Ok(AgentWindow {
        l,
        states: Tensor::new(vec![l, d], states).map_err(crate::model::ModelError::from)?,
        present,
        targets,
        availability,
        last_slots,
    })
}

fn causal_allow(w: &AgentWindow) -> Result<Vec<bool>, EvalError> {
    let mut m = build_base_mask(w.l, 1)?;
    m.apply_presence(&w.present);
    Ok(m.allow().to_vec())
}

fn forward(g: &mut Graph, b: &Bound, w: &AgentWindow, allow: &[bool]) -> Result<crate::numeric::Var, EvalError> {
    let input = TokenInput { states: w.states.clone(), steps: (0..w.l).collect() };
    let x = embed(g, b, &input)?;
    let h = encode(g, b, x, allow, None)?;
    Ok(intrinsic_head(g, b, h)?)
}

fn agent_pass(params: &Params, w: &AgentWindow, with_grad: bool) -> Result<WindowPass, TrainError> {
    let labelled = w.labelled();
    if labelled == 0 {
        return Ok(WindowPass { loss: 0.0, labelled: 0, correct: 0, grads: None });
    }
    let allow = causal_allow(w).map_err(|e| TrainError::Eval(e.to_string()))?;
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params, with_grad)?;
    let logits = forward(&mut g, &b, w, &allow).map_err(|e| TrainError::Eval(e.to_string()))?;
    let loss = imitation_loss(&mut g, logits, &w.targets, Some(&w.availability))?;
    let correct = count_correct(g.value(logits), &w.targets, &w.availability);
    let value = g.value(loss).item();
    let grads = if with_grad { Some(collect_grads(&g, &b, params, loss)?) } else { None };
    Ok(WindowPass { loss: value, labelled, correct, grads })
}

/// Per-agent windows of every living ally at a sampled `(episode, end)`.
pub fn sample_agent_windows<R: rand::Rng + ?Sized>(
    dataset: &Dataset,
    b: usize,
    l: usize,
    rng: &mut R,
) -> Result<Vec<AgentWindow>, TrainError> {
    let mut out = Vec::new();
    for _ in 0..b {
        let (e, t) = dataset.index().sample(rng).ok_or(DataError::Empty)?;
        let ep = &dataset.episodes[e];
        let cfg = dataset.scenario(&ep.scenario).expect("dataset checks scenarios");
        for i in living_allies(&ep.steps[t]) {
            out.push(agent_window(cfg, &ep.steps, t, l, i, true).map_err(|e| TrainError::Eval(e.to_string()))?);
        }
    }
    Ok(out)
}

/// Trains the baseline with the same optimizer, batch size (in sampled
/// `(episode, end)` pairs) and step budget as the main model.
pub fn train_madt(dataset: &Dataset, cfg: &TrainConfig, mut opts: RunOptions<'_>) -> Result<TrainOutcome, TrainError> {
    let mut cfg = cfg.clone();
    cfg.model = madt_config(cfg.model);
    cfg.validate()?;
    if dataset.index().total() == 0 {
        return Err(TrainError::Data(DataError::Empty));
    }
    if let Some(s) = dataset.scenarios.iter().find(|s| s.unit_count() > n_max()) {
        return Err(TrainError::Config(format!("{} has more than {} units", s.id, n_max())));
    }
    let (params, opt, start) = initial_state(&cfg, opts.resume.take().as_ref())?;
    let l = cfg.context();
    let lr = cfg.learning_rate;
    let wd = cfg.weight_decay;
    run_loop(&cfg, params, opt, start, opts, |params, opt, step, rng| {
        let batch = sample_agent_windows(dataset, cfg.batch_size, l, rng)?;
        let snapshot = &*params;
        let passes = batch.par_iter().map(|w| agent_pass(snapshot, w, true)).collect::<Result<Vec<_>, _>>()?;
        let (loss, labelled, correct, grads) = reduce(passes, params.len());
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { step, detail: format!("batch loss {loss}") });
        }
        if labelled > 0 {
            opt.apply(params, &grads, lr, wd)?;
        }
        Ok(StepMetrics {
            step,
            loss,
            accuracy: if labelled == 0 { 0.0 } else { correct as f64 / labelled as f64 },
            labelled,
            mask_ratio: None,
            eval_win_rate: None,
        })
    })
}

/// Full-width logit row of agent `i` at the newest step (`K_intr + N_max`).
pub fn madt_logits(
    params: &Params,
    cfg: &ScenarioConfig,
    history: &[StepRecord],
    i: usize,
) -> Result<(Vec<f64>, Vec<usize>), EvalError> {
    let l = params.config().context;
    let end = history.len().checked_sub(1).ok_or(EvalError::EmptyHistory)?;
    let start = history.len().saturating_sub(l);
    let w = agent_window(cfg, &history[start..], end - start, l, i, false)?;
    let allow = causal_allow(&w)?;
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params, false)?;
    let logits = forward(&mut g, &b, &w, &allow)?;
    Ok((g.value(logits).row(l - 1).to_vec(), w.last_slots))
}

/// Greedy decentralized action of each requested living ally.
pub fn madt_actions(
    params: &Params,
    cfg: &ScenarioConfig,
    history: &[StepRecord],
    agents: &[usize],
) -> Result<Vec<(usize, ActionId)>, EvalError> {
    let rec = history.last().ok_or(EvalError::EmptyHistory)?;
    let mut out = Vec::with_capacity(agents.len());
    for &i in agents {
        if !(rec.units[i].alive && rec.units[i].team == Team::Ally) {
            continue;
        }
        let (row, order) = madt_logits(params, cfg, history, i)?;
        let avail = rec.available(i);
        let mut best: Option<(ActionId, f64)> = None;
        let mut consider = |a: ActionId, v: f64| {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((a, v));
            }
        };
        for k in 0..K_INTR {
            if avail[k] {
                consider(ActionId(k), row[k]);
            }
        }
        for (k, &j) in order.iter().enumerate() {
            if avail[K_INTR + j] {
                consider(ActionId::target(j), row[K_INTR + k]);
            }
        }
        out.push((i, best.map(|(a, _)| a).unwrap_or(ActionId::STOP)));
    }
    Ok(out)
}
