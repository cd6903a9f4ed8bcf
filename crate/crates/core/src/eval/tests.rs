use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::arena::{expert_policy, suite, Outcome, UnitType};
use crate::data::{record_episode, Dataset, EpisodeRecord};
use crate::model::ModelConfig;
use crate::training::{RunOptions, TrainConfig};

fn small_model() -> ModelConfig {
    ModelConfig { n_blocks: 2, d_hidden: 16, n_heads: 2, ..ModelConfig::desk() }
}

fn random_params(seed: u64) -> Params {
    Params::init(small_model(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn expert_episode(id: &str, seed: u64) -> (ScenarioConfig, EpisodeRecord) {
    let cfg = suite::by_id(id).unwrap();
    let ep = record_episode(&cfg.with_seed(seed), |w, i| expert_policy(w, i)).unwrap();
    (cfg, ep)
}

fn set_visibility(history: &mut [StepRecord], f: impl Fn(&StepRecord, usize, usize) -> bool) {
    for rec in history {
        let n = rec.n();
        let vis: Vec<bool> = (0..n * n).map(|k| f(rec, k / n, k % n)).collect();
        rec.visibility = vis;
    }
}

fn combined(l: &[Option<GarLogits>]) -> Vec<Option<Vec<f64>>> {
    l.iter().map(|x| x.as_ref().map(GarLogits::combined)).collect()
}

#[test]
fn mode_names_round_trip() {
    for m in ExecutionMode::ALL {
        assert_eq!(m.to_string().parse::<ExecutionMode>().unwrap(), m);
    }
    assert_eq!("centralized".parse::<ExecutionMode>().unwrap(), ExecutionMode::Centralized);
    assert!("partial".parse::<ExecutionMode>().is_err());
    assert!(!ExecutionMode::Centralized.is_decentralized());
}

#[test]
fn hand_set_head_bias_decides_the_action() {
    let (cfg, ep) = expert_episode("3f_v_3f", 0);
    let mut p = Params::zeros(small_model()).unwrap();
    let k = K_INTR;
    let mut b = vec![0.0; k];
    b[ActionId::STOP.index()] = 3.0;
    p.set("head.intr.b", Tensor::new(vec![k], b).unwrap()).unwrap();
    let history = &ep.steps[..3];
    for mode in ExecutionMode::ALL {
        let joint = joint_action(&agent_logits(&p, &cfg, history, mode, None).unwrap()).unwrap();
        for u in living_allies(&history[2]) {
            assert_eq!(joint[u], ActionId::STOP, "{mode}");
        }
    }
}

#[test]
fn dead_and_enemy_units_get_no_logits() {
    let (cfg, ep) = expert_episode("3f_v_3f", 1);
    let t = ep.steps.iter().position(|r| r.units.iter().any(|u| u.team == Team::Ally && !u.alive));
    let Some(t) = t else { return };
    let p = random_params(3);
    let history = &ep.steps[..=t];
    let rec = &history[t];
    let logits = agent_logits(&p, &cfg, history, ExecutionMode::DecentralizedStrict, None).unwrap();
    let joint = joint_action(&logits).unwrap();
    for u in 0..rec.n() {
        let is_agent = rec.units[u].alive && rec.units[u].team == Team::Ally;
        assert_eq!(logits[u].is_some(), is_agent);
        if !is_agent {
            assert_eq!(joint[u], ActionId::NOOP);
        }
    }
}

#[test]
fn full_visibility_makes_all_modes_agree() {
    let (cfg, ep) = expert_episode("2f1h_v_3f", 2);
    let p = random_params(4);
    for end in [0, 2, 7] {
        let mut history = ep.steps[..=end].to_vec();
        set_visibility(&mut history, |_, _, _| true);
        let c = agent_logits(&p, &cfg, &history, ExecutionMode::Centralized, None).unwrap();
        for mode in [ExecutionMode::DecentralizedStrict, ExecutionMode::DecentralizedFast] {
            let d = agent_logits(&p, &cfg, &history, mode, None).unwrap();
            for (a, b) in c.iter().zip(&d) {
                match (a, b) {
                    (Some(a), Some(b)) => {
                        assert_eq!(a.availability, b.availability);
                        for (x, y) in a.combined().iter().zip(b.combined()) {
                            assert!((x - y).abs() <= 1e-6, "{mode} at {end}: {x} vs {y}");
                        }
                    }
                    (None, None) => {}
                    _ => panic!("agent sets differ"),
                }
            }
        }
    }
}

#[test]
fn strict_mode_ignores_unseen_units() {
    let mut cfg = suite::by_id("4f_v_4f").unwrap();
    cfg.stats.set_sight(2);
    let ep = record_episode(&cfg.with_seed(5), |w, i| expert_policy(w, i)).unwrap();
    let p = random_params(6);
    let end = 6.min(ep.len() - 1);
    let history = ep.steps[..=end].to_vec();
    let strict = agent_logits(&p, &cfg, &history, ExecutionMode::DecentralizedStrict, None).unwrap();
    let central = agent_logits(&p, &cfg, &history, ExecutionMode::Centralized, None).unwrap();
    let mut blind_agents = 0;
    for i in living_allies(history.last().unwrap()) {
        // perturb what agent i cannot see, keeping positions (and so visibility)
        let mut probed = history.clone();
        let mut touched = false;
        let first = probed.len().saturating_sub(p.config().context);
        for rec in &mut probed[first..] {
            let n = rec.n();
            let hidden: Vec<usize> = (0..n).filter(|&j| !rec.visibility[i * n + j] && rec.units[j].alive).collect();
            for j in hidden {
                let u = &mut rec.units[j];
                u.hp = u.hp.saturating_sub(1).max(1);
                u.cooldown = (u.cooldown + 3) % 5;
                u.last_action = Some(ActionId::STOP);
                touched = true;
            }
        }
        if !touched {
            continue;
        }
        blind_agents += 1;
        let after = agent_logits(&p, &cfg, &probed, ExecutionMode::DecentralizedStrict, Some(&[i])).unwrap();
        let (a, b) = (strict[i].as_ref().unwrap(), after[i].as_ref().unwrap());
        assert_eq!(a.availability, b.availability);
        for (k, (x, y)) in a.combined().iter().zip(b.combined()).enumerate() {
            if k < K_INTR || a.availability[k] {
                assert_eq!(x.to_bits(), y.to_bits(), "agent {i}, action {k}");
            }
        }
        let central_after = agent_logits(&p, &cfg, &probed, ExecutionMode::Centralized, None).unwrap();
        assert_ne!(combined(&central), combined(&central_after), "probe must reach the centralized model");
    }
    assert!(blind_agents > 0);
}

#[test]
fn self_only_visibility_reduces_to_own_history() {
    let (cfg, ep) = expert_episode("3f_v_3f", 7);
    let p = random_params(8);
    let mut history = ep.steps[..5].to_vec();
    set_visibility(&mut history, |_, i, j| i == j);
    let strict = agent_logits(&p, &cfg, &history, ExecutionMode::DecentralizedStrict, None).unwrap();
    let fast = agent_logits(&p, &cfg, &history, ExecutionMode::DecentralizedFast, None).unwrap();
    let w = live_window(&cfg, &history, p.config().context).unwrap();
    for i in living_allies(history.last().unwrap()) {
        let toks = visible_tokens(&w, i);
        assert!(toks.iter().all(|&t| t % w.n == i));
        let (s, f) = (strict[i].as_ref().unwrap(), fast[i].as_ref().unwrap());
        assert_eq!(s.availability, f.availability);
        // only self-targets can survive visibility
        assert!(s.availability[K_INTR..].iter().enumerate().all(|(j, &a)| !a || j == i));
        for k in 0..K_INTR {
            assert!((s.intrinsic[k] - f.intrinsic[k]).abs() <= 1e-9);
        }
    }
}

#[test]
fn fast_equals_strict_when_visibility_is_a_clique() {
    let (cfg, ep) = expert_episode("2f1h_v_3f", 9);
    let p = random_params(10);
    let mut history = ep.steps[..6].to_vec();
    set_visibility(&mut history, |rec, i, j| rec.units[i].team == rec.units[j].team);
    let strict = agent_logits(&p, &cfg, &history, ExecutionMode::DecentralizedStrict, None).unwrap();
    let fast = agent_logits(&p, &cfg, &history, ExecutionMode::DecentralizedFast, None).unwrap();
    for (a, b) in strict.iter().zip(&fast) {
        if let (Some(a), Some(b)) = (a, b) {
            assert_eq!(a.availability, b.availability);
            for (k, (x, y)) in a.combined().iter().zip(b.combined()).enumerate() {
                if a.availability[k] || k < K_INTR {
                    assert!((x - y).abs() <= 1e-9);
                }
            }
        }
    }
}

#[test]
fn inference_is_deterministic() {
    let (cfg, ep) = expert_episode("3f_v_3f", 11);
    let p = random_params(12);
    let h = &ep.steps[..4];
    for mode in ExecutionMode::ALL {
        let a = agent_logits(&p, &cfg, h, mode, None).unwrap();
        let b = agent_logits(&p, &cfg, h, mode, None).unwrap();
        assert_eq!(a, b);
    }
    let cfg = suite::by_id("3f_v_3f").unwrap();
    let r = Rollout::new(Controller::Model { params: &p, mode: ExecutionMode::DecentralizedStrict });
    assert_eq!(evaluate(&cfg, &r, 3, 2).unwrap(), evaluate(&cfg, &r, 3, 2).unwrap());
}

#[test]
fn report_aggregates_per_seed() {
    let (mean, std) = mean_std(&[0.5, 1.0]);
    assert!((mean - 0.75).abs() < 1e-12);
    assert!((std - 0.125f64.sqrt()).abs() < 1e-12);
    assert_eq!(mean_std(&[0.4]), (0.4, 0.0));

    let cfg = suite::by_id("3f_v_3f").unwrap();
    let r = evaluate(&cfg, &Rollout::new(Controller::Expert { kiting: true }), 4, 3).unwrap();
    assert_eq!(r.seeds, 3);
    assert_eq!(r.episodes, 4);
    assert_eq!(r.rollouts(), 12);
    assert_eq!(r.win_rates.len(), 3);
    let expect = r.win_rates.iter().sum::<f64>() / 3.0;
    assert!((r.mean - expect).abs() < 1e-12);
    assert!(summary_table(&[r.clone()]).contains("3f_v_3f"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.jsonl");
    write_reports(&path, &[r.clone()]).unwrap();
    write_reports(&path, &[r.clone()]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let back: EvalReport = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(back, r);
}

#[test]
fn expert_wins_through_the_harness() {
    let cfg = suite::by_id("3f_v_3f").unwrap();
    let r = evaluate(&cfg, &Rollout::new(Controller::Expert { kiting: true }), 20, 1).unwrap();
    assert!(r.mean >= 0.9, "expert won {}", r.mean);
}

#[test]
fn untrained_model_is_weaker_than_the_expert() {
    let cfg = suite::downstream_battle();
    let p = random_params(13);
    let model = evaluate(&cfg, &Rollout::new(Controller::Model { params: &p, mode: ExecutionMode::Centralized }), 8, 1)
        .unwrap();
    let expert = evaluate(&cfg, &Rollout::new(Controller::Expert { kiting: true }), 8, 1).unwrap();
    assert!(model.mean < expert.mean, "random {} vs expert {}", model.mean, expert.mean);
}

#[test]
fn varied_policy_endpoints() {
    let cfg = suite::by_id("3f_v_3f").unwrap();
    let p = random_params(14);
    let primary = Controller::Model { params: &p, mode: ExecutionMode::Centralized };
    let out = run_varied_policies(primary, &cfg, &[0.0, 1.0], 3, 1).unwrap();
    let nokite = evaluate(&cfg, &Rollout::new(Controller::Expert { kiting: false }), 3, 1).unwrap();
    let alone = evaluate(&cfg, &Rollout::new(primary), 3, 1).unwrap();
    assert_eq!(out[0].1.outcomes, nokite.outcomes);
    assert_eq!(out[1].1.outcomes, alone.outcomes);
    assert_eq!(out[0].1.setting.as_deref(), Some("rho=0"));
}

#[test]
fn malfunctioning_ally_only_stops() {
    let cfg = suite::downstream_battle();
    let at = intervention_step(&cfg, 0.2);
    assert_eq!(at, 12);
    let r = run_episode(&cfg, &Rollout { intervention: Intervention::Malfunction { at }, ..Rollout::new(Controller::Expert { kiting: true }) }, 3)
        .unwrap();
    let b = r.malfunctioning.expect("someone breaks");
    assert_eq!(r.intervened_at, Some(at));
    for rec in &r.record.steps[at..] {
        if rec.units[b].alive {
            assert_eq!(rec.actions[b], ActionId::STOP);
        }
    }
    // a trigger at max_steps never fires
    let base = Rollout::new(Controller::Expert { kiting: true });
    let late = Rollout { intervention: Intervention::Malfunction { at: intervention_step(&cfg, 1.0) }, ..base };
    assert_eq!(evaluate(&cfg, &late, 4, 1).unwrap().outcomes, evaluate(&cfg, &base, 4, 1).unwrap().outcomes);
}

#[test]
fn inserted_ally_joins_the_action_space() {
    let cfg = suite::adhoc_battle();
    let p = random_params(15);
    let at = 2;
    let rollout = Rollout {
        intervention: Intervention::Insert { at, kind: UnitType::Fighter },
        ..Rollout::new(Controller::Model { params: &p, mode: ExecutionMode::DecentralizedStrict })
    };
    let r = run_episode(&cfg, &rollout, 4).unwrap();
    assert_eq!(r.inserted, Some(true));
    let steps = &r.record.steps;
    assert_eq!(steps[at].n(), steps[at - 1].n() + 1);
    let logits = agent_logits(&p, &cfg, &steps[..=at], ExecutionMode::Centralized, None).unwrap();
    let newcomer = steps[at].n() - 1;
    assert_eq!(logits[newcomer].as_ref().unwrap().len(), K_INTR + steps[at].n());
    assert_eq!(logits[0].as_ref().unwrap().len(), K_INTR + steps[at].n());

    let out = run_adhoc_teamplay(Controller::Expert { kiting: true }, &cfg, &[0.2], 2, 1).unwrap();
    assert_eq!(out[0].0, None);
    assert_eq!(out[1].1.no_insert, Some(0));
}

#[test]
fn madt_has_a_fixed_action_space() {
    assert_eq!(madt::n_max(), 20);
    let base = small_model();
    let mc = madt::madt_config(base);
    assert_eq!(mc.k_intr, K_INTR + 20);
    let p = Params::init(mc, &mut ChaCha8Rng::seed_from_u64(16)).unwrap();
    for id in ["3f_v_3f", "6f_v_6f"] {
        let (cfg, ep) = expert_episode(id, 0);
        let (row, slots) = madt::madt_logits(&p, &cfg, &ep.steps[..3], 0).unwrap();
        assert_eq!(row.len(), K_INTR + 20);
        assert_eq!(slots[0], 0);
        let acts = madt::madt_actions(&p, &cfg, &ep.steps[..3], &[0, 1]).unwrap();
        for (u, a) in acts {
            assert!(ep.steps[2].available(u)[a.index()]);
        }
    }
    let big = suite::battle("9f_v_12f", "9f", "12f");
    let ep = record_episode(&big, |w, i| expert_policy(w, i)).unwrap();
    assert!(matches!(madt::madt_logits(&p, &big, &ep.steps[..1], 0), Err(EvalError::TooManyUnits { n: 21, max: 20 })));
}

#[test]
fn madt_training_runs() {
    let (cfg, _) = expert_episode("3f_v_3f", 0);
    let eps = (0..2).map(|s| expert_episode("3f_v_3f", s).1).collect();
    let ds = Dataset::new(vec![cfg.clone()], eps).unwrap();
    let mut tc = TrainConfig::desk();
    tc.model = small_model();
    tc.batch_size = 2;
    tc.steps = 3;
    tc.learning_rate = 1e-3;
    let out = madt::train_madt(&ds, &tc, RunOptions::default()).unwrap();
    assert_eq!(out.metrics.len(), 3);
    assert!(out.metrics.iter().all(|m| m.loss.is_finite() && m.labelled > 0));
    let r = evaluate(&cfg, &Rollout::new(Controller::Madt { params: &out.params }), 2, 1).unwrap();
    assert_eq!(r.controller, "madt-strict");
    assert!(r.outcomes.iter().flatten().all(|o| *o != Outcome::Ongoing));
}
