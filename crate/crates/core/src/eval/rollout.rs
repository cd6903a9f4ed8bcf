use rayon::prelude::*;

use super::{agent_logits, joint_action, madt, EvalError, EvalReport, ExecutionMode};
use crate::action::ActionId;
use crate::arena::{expert_policy_with, noisy_enemy_action, Outcome, ScenarioConfig, Team, UnitType, WorldState};
use crate::data::{EpisodeRecord, ReturnMeter, StepRecord};
use crate::model::Params;

/// Something that picks actions for allied units.
#[derive(Clone, Copy, Debug)]
pub enum Controller<'a> {
    Model { params: &'a Params, mode: ExecutionMode },
    /// Fixed-head baseline, always decentralized.
    Madt { params: &'a Params },
    /// Scripted expert; `kiting: false` is the weaker partner policy.
    Expert { kiting: bool },
}

impl Controller<'_> {
    pub fn label(&self) -> String {
        match self {
            Controller::Model { mode, .. } => format!("maskma-{mode}"),
            Controller::Madt { .. } => "madt-strict".into(),
            Controller::Expert { kiting: true } => "expert".into(),
            Controller::Expert { kiting: false } => "expert-nokite".into(),
        }
    }

    /// Actions of the living allies among `units`.
    fn act(
        &self,
        cfg: &ScenarioConfig,
        w: &WorldState,
        history: &[StepRecord],
        units: &[usize],
    ) -> Result<Vec<(usize, ActionId)>, EvalError> {
        let living: Vec<usize> =
            units.iter().copied().filter(|&u| w.unit(u).alive && w.unit(u).team == Team::Ally).collect();
        if living.is_empty() {
            return Ok(Vec::new());
        }
        match self {
            Controller::Model { params, mode } => {
                let joint = joint_action(&agent_logits(params, cfg, history, *mode, Some(&living))?)?;
                Ok(living.iter().map(|&u| (u, joint[u])).collect())
            }
            Controller::Madt { params } => madt::madt_actions(params, cfg, history, &living),
            Controller::Expert { kiting } => Ok(living.iter().map(|&u| (u, expert_policy_with(w, u, *kiting))).collect()),
        }
    }
}

/// Scripted disturbance applied during an episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Intervention {
    None,
    /// From step `at` on, the lowest-index living ally only stops.
    Malfunction { at: usize },
    /// At step `at`, a new ally of `kind` appears next to the team centroid.
    Insert { at: usize, kind: UnitType },
}

#[derive(Clone, Copy, Debug)]
pub struct Rollout<'a> {
    pub primary: Controller<'a>,
    /// `(partner, k)`: allies after the first `k` follow `partner`.
    pub partner: Option<(Controller<'a>, usize)>,
    pub intervention: Intervention,
}

impl<'a> Rollout<'a> {
    pub fn new(primary: Controller<'a>) -> Self {
        Rollout { primary, partner: None, intervention: Intervention::None }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub record: EpisodeRecord,
    /// For insertion episodes: whether the insertion happened.
    pub inserted: Option<bool>,
    pub malfunctioning: Option<usize>,
    /// Step at which the intervention took effect.
    pub intervened_at: Option<usize>,
}

/// Plays one episode of `cfg` (seeded by `seed`) against the noisy
/// scripted enemy.
pub fn run_episode(cfg: &ScenarioConfig, rollout: &Rollout<'_>, seed: u64) -> Result<EpisodeResult, EvalError> {
    let cfg = cfg.with_seed(seed);
    let mut w = WorldState::reset(&cfg)?;
    let mut meter = ReturnMeter::new(&w);
    let allies: Vec<usize> = (0..w.n_units()).filter(|&u| w.unit(u).team == Team::Ally).collect();
    let (mut primary_units, mut partner_units) = match rollout.partner {
        Some((_, k)) => (allies[..k.min(allies.len())].to_vec(), allies[k.min(allies.len())..].to_vec()),
        None => (allies.clone(), Vec::new()),
    };
    let mut history: Vec<StepRecord> = Vec::new();
    let mut inserted = None;
    let mut broken = None;
    let mut intervened_at = None;
    while w.terminal() == Outcome::Ongoing {
        let t = w.t();
        match rollout.intervention {
            Intervention::Insert { at, kind } if t == at => {
                let placed = w.free_cell_near_centroid(Team::Ally).map(|c| w.insert_unit(kind, Team::Ally, c));
                match placed {
                    Some(Ok(idx)) => {
                        primary_units.push(idx);
                        inserted = Some(true);
                        intervened_at = Some(t);
                    }
                    _ => inserted = Some(false),
                }
            }
            Intervention::Malfunction { at } if t == at => {
                broken = allies.iter().copied().find(|&u| w.unit(u).alive);
                intervened_at = broken.map(|_| t);
            }
            _ => {}
        }
        let rec = StepRecord::observe(&w);
        history.push(rec);
        let mut joint = vec![ActionId::NOOP; w.n_units()];
        for (u, a) in rollout.primary.act(&cfg, &w, &history, &primary_units)? {
            joint[u] = a;
        }
        if let Some((partner, _)) = &rollout.partner {
            for (u, a) in partner.act(&cfg, &w, &history, &partner_units)? {
                joint[u] = a;
            }
        }
        if let Some(b) = broken {
            if w.unit(b).alive {
                joint[b] = ActionId::STOP;
            }
        }
        for u in 0..w.n_units() {
            if w.unit(u).team == Team::Enemy {
                joint[u] = noisy_enemy_action(&mut w, u);
            }
        }
        let events = w.step(&joint)?;
        meter.add(&w, &events);
        history.last_mut().expect("pushed above").actions = joint;
        partner_units.retain(|&u| u < w.n_units());
    }
    if matches!(rollout.intervention, Intervention::Insert { .. }) && inserted.is_none() {
        // the episode ended before the insertion step
        inserted = Some(false);
    }
    let outcome = w.terminal();
    Ok(EpisodeResult {
        outcome,
        record: EpisodeRecord {
            scenario: cfg.id.clone(),
            seed,
            steps: history,
            outcome,
            episode_return: meter.finish(outcome),
        },
        inserted,
        malfunctioning: broken,
        intervened_at,
    })
}

/// Seed of evaluation episode `episode` under evaluation seed `seed`; kept
/// far from the small seeds used for recording datasets.
pub fn eval_seed(seed: u64, episode: usize) -> u64 {
    (1 << 40) + seed * 1_000_003 + episode as u64
}

/// `episodes × seeds` rollouts, run in parallel; draws count as non-wins.
pub fn evaluate(
    cfg: &ScenarioConfig,
    rollout: &Rollout<'_>,
    episodes: usize,
    seeds: usize,
) -> Result<EvalReport, EvalError> {
    let jobs: Vec<(usize, usize)> = (0..seeds).flat_map(|s| (0..episodes).map(move |e| (s, e))).collect();
    let results = jobs
        .par_iter()
        .map(|&(s, e)| run_episode(cfg, rollout, eval_seed(s as u64, e)).map(|r| (r.outcome, r.inserted)))
        .collect::<Result<Vec<_>, _>>()?;
    let outcomes: Vec<Vec<Outcome>> =
        (0..seeds).map(|s| results[s * episodes..(s + 1) * episodes].iter().map(|r| r.0).collect()).collect();
    let no_insert = results.iter().filter(|r| r.1 == Some(false)).count();
    let mut report = EvalReport::from_outcomes(&cfg.id, &rollout.primary.label(), outcomes);
    if matches!(rollout.intervention, Intervention::Insert { .. }) {
        report.no_insert = Some(no_insert);
    }
    Ok(report)
}

/// Win rate with the first `⌈ρM⌉` allies on `primary` and the rest on the
/// expert without kiting, for each `ρ` in `fractions`.
pub fn run_varied_policies(
    primary: Controller<'_>,
    cfg: &ScenarioConfig,
    fractions: &[f64],
    episodes: usize,
    seeds: usize,
) -> Result<Vec<(f64, EvalReport)>, EvalError> {
    let m = cfg.allies.len();
    fractions
        .iter()
        .map(|&rho| {
            let k = (rho * m as f64 - 1e-9).ceil().max(0.0) as usize;
            let rollout = Rollout {
                primary,
                partner: Some((Controller::Expert { kiting: false }, k.min(m))),
                intervention: Intervention::None,
            };
            let mut r = evaluate(cfg, &rollout, episodes, seeds)?;
            r.setting = Some(format!("rho={rho}"));
            Ok((rho, r))
        })
        .collect()
}

/// Malfunction step for fraction `f`: `⌊f · max_steps⌋`.
pub fn intervention_step(cfg: &ScenarioConfig, f: f64) -> usize {
    (f * cfg.max_steps as f64).floor() as usize
}

/// Win rate when one ally breaks down at `⌊f·max_steps⌋`, per `f`.
pub fn run_ally_malfunction(
    primary: Controller<'_>,
    cfg: &ScenarioConfig,
    fractions: &[f64],
    episodes: usize,
    seeds: usize,
) -> Result<Vec<(f64, EvalReport)>, EvalError> {
    fractions
        .iter()
        .map(|&f| {
            let rollout = Rollout {
                primary,
                partner: None,
                intervention: Intervention::Malfunction { at: intervention_step(cfg, f) },
            };
            let mut r = evaluate(cfg, &rollout, episodes, seeds)?;
            r.setting = Some(format!("f={f}"));
            Ok((f, r))
        })
        .collect()
}

/// Win rate on an under-manned battle when a fighter joins at
/// `⌊f·max_steps⌋`, per `f`; `None` in the result is the no-insert floor.
pub fn run_adhoc_teamplay(
    primary: Controller<'_>,
    cfg: &ScenarioConfig,
    fractions: &[f64],
    episodes: usize,
    seeds: usize,
) -> Result<Vec<(Option<f64>, EvalReport)>, EvalError> {
    let mut out = Vec::new();
    let mut floor = evaluate(cfg, &Rollout::new(primary), episodes, seeds)?;
    floor.setting = Some("none".into());
    out.push((None, floor));
    for &f in fractions {
        let rollout = Rollout {
            primary,
            partner: None,
            intervention: Intervention::Insert { at: intervention_step(cfg, f), kind: UnitType::Fighter },
        };
        let mut r = evaluate(cfg, &rollout, episodes, seeds)?;
        r.setting = Some(format!("f={f}"));
        out.push((Some(f), r));
    }
    Ok(out)
}
