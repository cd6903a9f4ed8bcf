use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::arena::{expert_policy, suite};
use crate::data::{build_window, record_episode, EpisodeRecord};

fn episodes(id: &str, count: u64) -> Dataset {
    let cfg = suite::by_id(id).unwrap();
    let eps: Vec<EpisodeRecord> =
        (0..count).map(|s| record_episode(&cfg.with_seed(s), |w, i| expert_policy(w, i)).unwrap()).collect();
    Dataset::new(vec![cfg], eps).unwrap()
}

fn small_cfg() -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.model = ModelConfig { n_blocks: 1, d_hidden: 16, n_heads: 2, ..ModelConfig::desk() };
    cfg.batch_size = 4;
    cfg.steps = 6;
    cfg
}

#[test]
fn mask_mode_parsing() {
    assert_eq!("none".parse::<MaskMode>().unwrap(), MaskMode::None);
    assert_eq!("fixed:0.2".parse::<MaskMode>().unwrap(), MaskMode::Fixed(0.2));
    assert_eq!("0.5".parse::<MaskMode>().unwrap(), MaskMode::Fixed(0.5));
    assert_eq!("random".parse::<MaskMode>().unwrap(), MaskMode::Random);
    assert_eq!("local".parse::<MaskMode>().unwrap(), MaskMode::Local);
    assert!("fixed:1.5".parse::<MaskMode>().is_err());
    assert!("sometimes".parse::<MaskMode>().is_err());
    for m in [MaskMode::None, MaskMode::Fixed(0.8), MaskMode::Random, MaskMode::Local] {
        assert_eq!(m.to_string().parse::<MaskMode>().unwrap(), m);
    }
}

#[test]
fn none_mode_mask_is_the_base_mask() {
    let ds = episodes("3f_v_3f", 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for w in sample_windows(&ds, 20, 5, &mut rng).unwrap() {
        let (m, r) = window_mask(&w, MaskMode::None, &mut rng).unwrap();
        let mut base = build_base_mask(w.l, w.n).unwrap();
        base.apply_presence(&w.present);
        assert_eq!(m, base);
        assert!(r.is_none());
        let (local, _) = window_mask(&w, MaskMode::Local, &mut rng).unwrap();
        assert!(local.is_subset_of(&base));
    }
}

#[test]
fn empirical_drop_rate_matches_ratio() {
    let ds = episodes("4f_v_4f", 4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let windows = sample_windows(&ds, 1000, 5, &mut rng).unwrap();
    for ratio in [0.2, 0.5, 0.8] {
        let (mut eligible, mut dropped) = (0usize, 0usize);
        for w in &windows {
            let (m, _) = window_mask(w, MaskMode::Fixed(ratio), &mut rng).unwrap();
            let mut base = build_base_mask(w.l, w.n).unwrap();
            base.apply_presence(&w.present);
            let t = w.tokens();
            for q in 0..t {
                for k in 0..t {
                    if base.allow()[q * t + k] && q % w.n != k % w.n {
                        eligible += 1;
                        dropped += !m.allow()[q * t + k] as usize;
                    }
                }
            }
        }
        let rate = dropped as f64 / eligible as f64;
        assert!((rate - ratio).abs() <= 0.02, "ratio {ratio}: {rate}");
    }
}

#[test]
fn zero_learning_rate_leaves_params_unchanged() {
    let ds = episodes("3f_v_3f", 2);
    let mut cfg = small_cfg();
    cfg.learning_rate = 0.0;
    let out = train(&ds, &cfg, RunOptions::default()).unwrap();
    let (fresh, _, _) = initial_state(&cfg, None).unwrap();
    assert_eq!(out.params, fresh);
    assert_eq!(out.metrics.len(), 6);
}

#[test]
fn one_step_descends_on_a_window() {
    let ds = episodes("3f_v_3f", 1);
    let w = ds.window(0, 6, 5).unwrap();
    let mut cfg = small_cfg();
    cfg.learning_rate = 1e-3;
    cfg.mask_mode = MaskMode::None;
    let (mut params, mut opt, _) = initial_state(&cfg, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let before = evaluate_windows(&params, std::slice::from_ref(&w)).unwrap().0;
    let m = train_step(&mut params, &mut opt, std::slice::from_ref(&w), &cfg, 0, &mut rng).unwrap();
    assert!((m.loss - before).abs() < 1e-12);
    let after = evaluate_windows(&params, std::slice::from_ref(&w)).unwrap().0;
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn overfits_ten_episodes() {
    let ds = episodes("3f_v_3f", 10);
    let mut cfg = TrainConfig::desk();
    cfg.learning_rate = 1e-3;
    cfg.steps = 300;
    cfg.mask_mode = MaskMode::None;
    let out = train(&ds, &cfg, RunOptions::default()).unwrap();
    let windows: Vec<_> = (0..ds.episodes.len())
        .flat_map(|e| (0..ds.episodes[e].len()).map(move |t| (e, t)))
        .map(|(e, t)| ds.window(e, t, 5).unwrap())
        .collect();
    let (_, acc) = evaluate_windows(&out.params, &windows).unwrap();
    assert!(acc > 0.95, "training-window accuracy {acc}");
}

#[test]
fn identical_seeds_give_identical_logs() {
    let ds = episodes("2f1h_v_3f", 3);
    let cfg = small_cfg();
    let dir = tempfile::tempdir().unwrap();
    let a = train(&ds, &cfg, RunOptions { out_dir: Some(dir.path().join("a")), ..Default::default() }).unwrap();
    let b = train(&ds, &cfg, RunOptions { out_dir: Some(dir.path().join("b")), ..Default::default() }).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.params, b.params);
    let log_a = std::fs::read_to_string(dir.path().join("a").join(METRICS_FILE)).unwrap();
    let log_b = std::fs::read_to_string(dir.path().join("b").join(METRICS_FILE)).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.lines().count(), 6);
    let first: StepMetrics = serde_json::from_str(log_a.lines().next().unwrap()).unwrap();
    assert_eq!(first.step, 0);
    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(train(&ds, &other, RunOptions::default()).unwrap().metrics, a.metrics);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let ds = episodes("3f_v_3f", 3);
    let cfg = small_cfg();
    let full = train(&ds, &cfg, RunOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut half = cfg.clone();
    half.steps = 3;
    train(&ds, &half, RunOptions { out_dir: Some(dir.path().to_path_buf()), ..Default::default() }).unwrap();
    let ck = crate::model::read_checkpoint(&dir.path().join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(ck.step, 3);
    let rest = train(
        &ds,
        &cfg,
        RunOptions { out_dir: Some(dir.path().to_path_buf()), resume: Some(ck), ..Default::default() },
    )
    .unwrap();
    assert_eq!(rest.params, full.params);
    assert_eq!(rest.metrics, full.metrics[3..]);
    let log = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let steps: Vec<u64> = log.lines().map(|l| serde_json::from_str::<StepMetrics>(l).unwrap().step).collect();
    assert_eq!(steps, (0..6).collect::<Vec<_>>());
}

#[test]
fn best_checkpoint_follows_evaluation() {
    let ds = episodes("3f_v_3f", 2);
    let mut cfg = small_cfg();
    cfg.eval_every = 2;
    let scores = std::cell::RefCell::new(vec![0.3, 0.7, 0.5].into_iter());
    let dir = tempfile::tempdir().unwrap();
    let out = train(
        &ds,
        &cfg,
        RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            evaluate: Some(Box::new(|_| Ok(scores.borrow_mut().next().unwrap()))),
            ..Default::default()
        },
    )
    .unwrap();
    let (_, score, step) = out.best.unwrap();
    assert_eq!((score, step), (0.7, 4));
    assert_eq!(crate::model::read_checkpoint(&dir.path().join(BEST_CHECKPOINT)).unwrap().step, 4);
    let evals: Vec<Option<f64>> = out.metrics.iter().map(|m| m.eval_win_rate).collect();
    assert_eq!(evals, vec![None, Some(0.3), None, Some(0.7), None, Some(0.5)]);
}

#[test]
fn non_finite_loss_aborts() {
    let ds = episodes("3f_v_3f", 1);
    let cfg = small_cfg();
    let (mut params, mut opt, _) = initial_state(&cfg, None).unwrap();
    // a constant offset after the final norm times a huge head overflows
    let d = cfg.model.d_hidden;
    params.set("final_ln.b", Tensor::new(vec![d], vec![1.0; d]).unwrap()).unwrap();
    let w = params.get("head.intr.w").unwrap().clone();
    params.set("head.intr.w", Tensor::new(w.shape().to_vec(), vec![1e308; w.len()]).unwrap()).unwrap();
    let batch = vec![build_window(&ds.scenarios[0], &ds.episodes[0].steps, 3, 5, true).unwrap()];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = train_step(&mut params, &mut opt, &batch, &cfg, 7, &mut rng).unwrap_err();
    assert!(matches!(err, TrainError::NonFinite { step: 7, .. }), "{err}");
}

#[test]
fn config_validation() {
    let mut cfg = TrainConfig::desk();
    assert!(cfg.validate().is_ok());
    cfg.batch_size = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = TrainConfig::desk();
    cfg.learning_rate = f64::NAN;
    assert!(cfg.validate().is_err());
}
