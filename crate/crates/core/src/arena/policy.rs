//! Scripted controllers: the expert that generates demonstrations, its
//! weaker no-kiting variant, and the built-in enemy AI.

use rand::seq::SliceRandom;
use rand::Rng;

use super::world::{chebyshev, manhattan, Team, WorldState};
use crate::action::{ActionId, Direction, K_INTR};

fn best_move<F>(w: &WorldState, i: usize, avail: &[bool], mut score: F) -> Option<ActionId>
where
    F: FnMut((i32, i32)) -> i64,
{
    let u = w.unit(i);
    let mut best: Option<(i64, ActionId)> = None;
    for d in Direction::ALL {
        let a = ActionId::move_to(d);
        if !avail[a.index()] {
            continue;
        }
        let (dx, dy) = d.delta();
        let s = score((u.x + dx, u.y + dy));
        // strict comparison keeps the first direction in N, E, S, W order on ties
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, a));
        }
    }
    best.map(|(_, a)| a)
}

/// Nearest unit of `team` visible to `i` by Chebyshev distance, lowest index on ties.
fn nearest_visible(w: &WorldState, i: usize, team: Team) -> Option<usize> {
    (0..w.n_units())
        .filter(|&j| j != i && w.unit(j).team == team && w.unit(j).alive && w.can_see(i, j))
        .min_by_key(|&j| (w.distance(i, j), j))
}

/// Step towards `target` if some available move strictly improves
/// (Chebyshev, Manhattan) distance; ties between moves go N, E, S, W.
fn approach(w: &WorldState, i: usize, target: usize, avail: &[bool]) -> Option<ActionId> {
    let here = w.unit(i).cell();
    let goal = w.unit(target).cell();
    let key = |c: (i32, i32)| chebyshev(c, goal) as i64 * 1000 + manhattan(c, goal) as i64;
    let current = key(here);
    let mut best: Option<(i64, ActionId)> = None;
    for d in Direction::ALL {
        let a = ActionId::move_to(d);
        if !avail[a.index()] {
            continue;
        }
        let (dx, dy) = d.delta();
        let k = key((here.0 + dx, here.1 + dy));
        if k < current && best.is_none_or(|(b, _)| k < b) {
            best = Some((k, a));
        }
    }
    best.map(|(_, a)| a)
}

fn opponent(team: Team) -> Team {
    match team {
        Team::Ally => Team::Enemy,
        Team::Enemy => Team::Ally,
    }
}

/// Scripted expert for a living controllable unit. Priorities:
///
/// 1. a healer heals the lowest-hp wounded visible ally in range;
/// 2. off cooldown, attack the lowest-hp visible enemy in range;
/// 3. on cooldown with an enemy in range, kite: step away from the nearest
///    enemy as far as possible while it stays within our attack range;
/// 4. approach the nearest visible enemy while it is out of range;
/// 5. stop.
///
/// With `kiting` false rule 3 is skipped; that weaker variant is the
/// external partner policy of the collaboration task.
pub fn expert_policy_with(w: &WorldState, i: usize, kiting: bool) -> ActionId {
    let me = w.unit(i);
    if !me.alive {
        return ActionId::NOOP;
    }
    let avail = w.available_actions(i);
    let stats = *w.stats(i);
    let n = w.n_units();
    let lowest = |pred: &dyn Fn(usize) -> bool| {
        (0..n).filter(|&j| avail[K_INTR + j] && pred(j)).min_by_key(|&j| (w.unit(j).hp, j))
    };

    if stats.heal > 0 {
        let wounded = |j: usize| {
            let u = w.unit(j);
            u.team == me.team && u.hp < w.stats(j).max_hp
        };
        if let Some(j) = lowest(&wounded) {
            return ActionId::target(j);
        }
    }
    if stats.damage > 0 && me.cooldown == 0 {
        if let Some(j) = lowest(&|j| w.unit(j).team != me.team) {
            return ActionId::target(j);
        }
    }
    let enemy = nearest_visible(w, i, opponent(me.team));
    if let Some(e) = enemy {
        let in_range = w.distance(i, e) <= stats.attack_range;
        if kiting && me.cooldown > 0 && in_range {
            // back off, but never past our own attack range
            let goal = w.unit(e).cell();
            let current = chebyshev(me.cell(), goal) as i64;
            let reach = stats.attack_range as i64;
            let kite = best_move(w, i, &avail, |c| {
                let d = chebyshev(c, goal) as i64;
                if d <= reach { d } else { i64::MIN }
            });
            if let Some(a) = kite {
                if let crate::action::ActionKind::Move(d) = a.kind() {
                    let (dx, dy) = d.delta();
                    let next = chebyshev((me.x + dx, me.y + dy), goal) as i64;
                    if next > current && next <= reach {
                        return a;
                    }
                }
            }
            return ActionId::STOP;
        }
        // healers hold at their own range; damage dealers keep closing in
        if !in_range || stats.damage > 0 {
            if let Some(a) = approach(w, i, e, &avail) {
                return a;
            }
        }
    }
    ActionId::STOP
}

pub fn expert_policy(w: &WorldState, i: usize) -> ActionId {
    expert_policy_with(w, i, true)
}

/// Built-in enemy AI: off cooldown, attack the nearest visible opponent in
/// range; otherwise advance on the nearest visible opponent (even while on
/// cooldown, so it walks into melee); otherwise stop.
pub fn enemy_policy(w: &WorldState, i: usize) -> ActionId {
    let me = w.unit(i);
    if !me.alive {
        return ActionId::NOOP;
    }
    let avail = w.available_actions(i);
    let foe = opponent(me.team);
    if let Some(j) = (0..w.n_units())
        .filter(|&j| avail[K_INTR + j] && w.unit(j).team == foe)
        .min_by_key(|&j| (w.distance(i, j), j))
    {
        return ActionId::target(j);
    }
    if let Some(e) = nearest_visible(w, i, foe) {
        if let Some(a) = approach(w, i, e, &avail) {
            return a;
        }
    }
    ActionId::STOP
}

/// Enemy action with the scenario's `enemy_noise`: with that probability a
/// uniformly random available action replaces the scripted one. Draws from
/// the world's own generator so episodes stay reproducible.
pub fn noisy_enemy_action(w: &mut WorldState, i: usize) -> ActionId {
    let noise = w.config().enemy_noise;
    if !w.unit(i).alive {
        return ActionId::NOOP;
    }
    if noise > 0.0 && w.rng_mut().gen::<f64>() < noise {
        let options: Vec<ActionId> = w
            .available_actions(i)
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(k, _)| ActionId(k))
            .collect();
        if let Some(a) = options.choose(w.rng_mut()) {
            return *a;
        }
    }
    enemy_policy(w, i)
}
