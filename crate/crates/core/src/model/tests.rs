use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::action::{ActionId, K_INTR};
use crate::arena::D_STATE;
use crate::masks::{build_base_mask, sample_training_mask};
use crate::numeric::{Graph, Tensor};

fn tiny(context: usize) -> ModelConfig {
    ModelConfig { n_blocks: 2, d_hidden: 16, n_heads: 2, context, d_state: D_STATE, k_intr: K_INTR }
}

fn random_input(rng: &mut ChaCha8Rng, l: usize, n: usize) -> TokenInput {
    let data = (0..l * n * D_STATE).map(|_| rng.gen_range(-1.0..1.0)).collect();
    TokenInput { states: Tensor::new(vec![l * n, D_STATE], data).unwrap(), steps: steps(l, n) }
}

fn steps(l: usize, n: usize) -> Vec<usize> {
    (0..l * n).map(|k| k / n).collect()
}

fn base_allow(l: usize, n: usize) -> Vec<bool> {
    build_base_mask(l, n).unwrap().allow().to_vec()
}

#[test]
fn presets_validate() {
    let p = ModelConfig::full();
    assert_eq!((p.n_blocks, p.d_hidden, p.n_heads, p.context), (6, 128, 8, 10));
    let d = ModelConfig::desk();
    assert_eq!((d.n_blocks, d.d_hidden, d.n_heads, d.context), (2, 64, 4, 5));
    assert!(p.validate().is_ok() && d.validate().is_ok());
    let bad = ModelConfig { d_hidden: 30, n_heads: 4, ..d };
    assert!(matches!(bad.validate(), Err(ModelError::Config(_))));
}

#[test]
fn embed_zero_params_gives_zero_tokens() {
    let params = Params::zeros(tiny(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = random_input(&mut rng, 2, 3);
    let mut g = Graph::new();
    let b = Bound::new(&mut g, &params, false).unwrap();
    let x = embed(&mut g, &b, &input).unwrap();
    assert!(g.value(x).data().iter().all(|v| *v == 0.0));
}

#[test]
fn embed_has_no_identity_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = Params::init(tiny(2), &mut rng).unwrap();
    let row: Vec<f64> = (0..D_STATE).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let data = [row.clone(), row].concat();
    let input = TokenInput { states: Tensor::new(vec![2, D_STATE], data).unwrap(), steps: vec![1, 1] };
    let mut g = Graph::new();
    let b = Bound::new(&mut g, &params, false).unwrap();
    let x = embed(&mut g, &b, &input).unwrap();
    let t = g.value(x);
    assert_eq!(t.row(0), t.row(1));
}

#[test]
fn embed_matches_affine_oracle() {
    // 3-dim state, 2-dim tokens
    let cfg = ModelConfig { n_blocks: 1, d_hidden: 2, n_heads: 1, context: 2, d_state: 3, k_intr: K_INTR };
    let mut params = Params::zeros(cfg).unwrap();
    let w = [[1.0, -2.0], [0.5, 0.0], [3.0, 1.0]];
    params.set("embed.w", Tensor::from_rows(&w.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()).unwrap();
    params.set("embed.b", Tensor::new(vec![2], vec![0.25, -0.75]).unwrap()).unwrap();
    params.set("embed.pos", Tensor::from_rows(&[vec![0.0, 0.0], vec![10.0, 20.0]]).unwrap()).unwrap();
    let s = [2.0, -1.0, 0.5];
    let input = TokenInput { states: Tensor::new(vec![1, 3], s.to_vec()).unwrap(), steps: vec![1] };
    let mut g = Graph::new();
    let b = Bound::new(&mut g, &params, false).unwrap();
    let x = embed(&mut g, &b, &input).unwrap();
    // by hand: [2 - 0.5 + 1.5, -4 + 0 + 0.5] + b + pos[1]
    assert_eq!(g.value(x).data(), &[3.0 + 0.25 + 10.0, -3.5 - 0.75 + 20.0]);
}

#[test]
fn embed_rejects_wrong_width() {
    let params = Params::zeros(tiny(2)).unwrap();
    let input = TokenInput { states: Tensor::zeros(&[2, D_STATE - 1]), steps: vec![0, 0] };
    let mut g = Graph::new();
    let b = Bound::new(&mut g, &params, false).unwrap();
    assert!(matches!(embed(&mut g, &b, &input), Err(ModelError::Input(_))));
}

fn identity(d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[d, d]);
    for i in 0..d {
        t.data_mut()[i * d + i] = 1.0;
    }
    t
}

fn ln(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().map(|v| (v - mean) / (var + crate::numeric::LAYER_NORM_EPS).sqrt()).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

#[test]
fn single_token_block_is_residual_value_path() {
    let d = 4;
    let cfg = ModelConfig { n_blocks: 1, d_hidden: d, n_heads: 2, context: 1, d_state: d, k_intr: K_INTR };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = Params::init(cfg, &mut rng).unwrap();
    for name in ["block0.attn.wq", "block0.attn.wk", "block0.attn.wv", "block0.attn.wo"] {
        params.set(name, identity(d)).unwrap();
    }
    let x: Vec<f64> = vec![0.3, -1.2, 2.0, 0.5];
    let mut g = Graph::new();
    let b = Bound::new(&mut g, &params, false).unwrap();
    let xv = g.constant(Tensor::new(vec![1, d], x.clone()).unwrap()).unwrap();
    let out = encode(&mut g, &b, xv, &[true], None).unwrap();

    // oracle: one key, so attention returns its value = LN1(x) (gain 1, bias 0)
    let x1: Vec<f64> = x.iter().zip(ln(&x)).map(|(a, b)| a + b).collect();
    let h2 = ln(&x1);
    let w1 = params.get("block0.ff.w1").unwrap();
    let w2 = params.get("block0.ff.w2").unwrap();
    let f: Vec<f64> = (0..4 * d).map(|c| gelu((0..d).map(|r| h2[r] * w1.get2(r, c)).sum())).collect();
    let x2: Vec<f64> = (0..d).map(|c| x1[c] + (0..4 * d).map(|r| f[r] * w2.get2(r, c)).sum::<f64>()).collect();
    let want = ln(&x2);
    for (a, b) in g.value(out).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn self_only_mask_attends_to_own_value() {
    let d = 4;
    let cfg = ModelConfig { n_blocks: 1, d_hidden: d, n_heads: 1, context: 1, d_state: d, k_intr: K_INTR };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = Params::init(cfg, &mut rng).unwrap();
    let t = 3;
    let x = Tensor::new(vec![t, d], (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let allow: Vec<bool> = (0..t * t).map(|k| k / t == k % t).collect();
    // encoding all tokens together must equal encoding each alone
    let mut g = Graph::new();
    let b = Bound::new(&mut g, &params, false).unwrap();
    let xv = g.constant(x.clone()).unwrap();
    let all = encode(&mut g, &b, xv, &allow, None).unwrap();
    for r in 0..t {
        let xr = g.constant(Tensor::new(vec![1, d], x.row(r).to_vec()).unwrap()).unwrap();
        let one = encode(&mut g, &b, xr, &[true], None).unwrap();
        for (a, b) in g.value(one).data().iter().zip(g.value(all).row(r)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn masked_key_column_has_no_influence() {
    let (l, n) = (2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = Params::init(ModelConfig { n_blocks: 1, ..tiny(l) }, &mut rng).unwrap();
    let input = random_input(&mut rng, l, n);
    // hide token 1 from every row but its own
    let mut allow = base_allow(l, n);
    let t = l * n;
    for q in 0..t {
        if q != 1 {
            allow[q * t + 1] = false;
        }
    }
    let before = infer(&params, &input, &allow, None, n).unwrap();
    let mut changed = input.clone();
    for c in 0..D_STATE {
        changed.states.data_mut()[D_STATE + c] += 5.0;
    }
    let after = infer(&params, &changed, &allow, None, n).unwrap();
    let width = K_INTR + n;
    for q in (0..t).filter(|&q| q != 1) {
        for c in 0..K_INTR {
            let (a, b) = (before.get2(q, c), after.get2(q, c));
            assert!((a - b).abs() < 1e-12, "row {q}");
        }
        // receiver slot 1 of timestep 0 uses token 1's own hidden state; every other slot is untouched
        for j in 0..n {
            if q / n == 0 && j == 1 {
                continue;
            }
            assert!((before.get2(q, K_INTR + j) - after.get2(q, K_INTR + j)).abs() < 1e-12);
        }
    }
    assert_eq!(before.shape(), &[t, width]);
}

#[test]
fn zero_head_gives_uniform_over_available() {
    let cfg = tiny(1);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut params = Params::init(cfg, &mut rng).unwrap();
    for name in ["head.intr.w", "head.intr.b", "head.pair.w_self", "head.pair.w_other", "head.pair.b"] {
        let shape = params.get(name).unwrap().shape().to_vec();
        params.set(name, Tensor::zeros(&shape)).unwrap();
    }
    let n = 3;
    let input = random_input(&mut rng, 1, n);
    let out = infer(&params, &input, &base_allow(1, n), None, n).unwrap();
    assert!(out.data().iter().all(|v| *v == 0.0));
    let mut avail = vec![false; K_INTR + n];
    avail[1] = true;
    avail[3] = true;
    avail[K_INTR + 2] = true;
    let logits = GarLogits::from_row(out.row(0), K_INTR, avail).unwrap();
    let p = logits.probabilities().unwrap();
    for (k, pk) in p.iter().enumerate() {
        let want = if [1, 3, K_INTR + 2].contains(&k) { 1.0 / 3.0 } else { 0.0 };
        assert!((pk - want).abs() < 1e-15);
    }
}

#[test]
fn single_unit_has_one_interactive_slot() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = Params::init(tiny(2), &mut rng).unwrap();
    let input = random_input(&mut rng, 2, 1);
    let out = infer(&params, &input, &base_allow(2, 1), None, 1).unwrap();
    assert_eq!(out.shape(), &[2, K_INTR + 1]);
}

#[test]
fn pair_logit_hand_example() {
    // d_hidden = 2, w = [1, 0, 0, 1], h_i = [2, 3], h_j = [5, 7] → 2 + 7 = 9
    let cfg = ModelConfig { n_blocks: 1, d_hidden: 2, n_heads: 1, context: 1, d_state: 2, k_intr: K_INTR };
    let mut params = Params::zeros(cfg).unwrap();
    params.set("head.pair.w_self", Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap()).unwrap();
    params.set("head.pair.w_other", Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap()).unwrap();
    let mut g = Graph::new();
    let b = Bound::new(&mut g, &params, false).unwrap();
    let h = g.constant(Tensor::from_rows(&[vec![2.0, 3.0], vec![5.0, 7.0]]).unwrap()).unwrap();
    let out = gar_head(&mut g, &b, h, 2).unwrap();
    let t = g.value(out);
    assert_eq!(t.get2(0, K_INTR + 1), 9.0);
    assert_eq!(t.get2(1, K_INTR), 5.0 + 3.0);
}

#[test]
fn argmax_respects_availability_and_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let l = GarLogits { intrinsic: vec![1.0, 5.0], interactive: vec![3.0], availability: vec![true, false, true] };
    assert_eq!(select_action(&l, Selection::Argmax, &mut rng).unwrap(), ActionId(2));
    let tie = GarLogits { intrinsic: vec![0.5; 3], interactive: vec![0.5; 2], availability: vec![true; 5] };
    assert_eq!(select_action(&tie, Selection::Argmax, &mut rng).unwrap(), ActionId(0));
    let none = GarLogits { intrinsic: vec![0.0], interactive: vec![0.0], availability: vec![false, false] };
    assert!(matches!(select_action(&none, Selection::Argmax, &mut rng), Err(ModelError::NoAvailableAction)));
}

#[test]
fn sampling_follows_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let l = GarLogits { intrinsic: vec![0.0], interactive: vec![3f64.ln()], availability: vec![true, true] };
    let draws = 10_000;
    let second = (0..draws)
        .filter(|_| select_action(&l, Selection::Sample, &mut rng).unwrap() == ActionId(1))
        .count();
    let freq = second as f64 / draws as f64;
    assert!((freq - 0.75).abs() < 0.02, "{freq}");
}

#[test]
fn loss_zero_when_targets_certain() {
    let rows: Vec<GarLogits> = (0..3)
        .map(|k| {
            let mut intr = vec![-2000.0; K_INTR];
            intr[k] = 0.0;
            GarLogits { intrinsic: intr, interactive: vec![-2000.0; 2], availability: vec![true; K_INTR + 2] }
        })
        .collect();
    let targets: Vec<Option<ActionId>> = (0..3).map(|k| Some(ActionId(k))).collect();
    assert_eq!(imitation_loss_value(&rows, &targets).unwrap(), 0.0);
}

#[test]
fn uniform_loss_is_log_of_action_count() {
    let rows = vec![GarLogits { intrinsic: vec![0.0; K_INTR], interactive: vec![0.0], availability: vec![true; 7] }; 4];
    let targets = vec![Some(ActionId(0)), Some(ActionId(6)), None, Some(ActionId(3))];
    let loss = imitation_loss_value(&rows, &targets).unwrap();
    assert!((loss - 7f64.ln()).abs() < 1e-12);
    assert!((loss - 1.9459).abs() < 1e-4);

    // only the available actions share the mass
    let mut avail = vec![false; 7];
    for k in [1, 2, 3, 6] {
        avail[k] = true;
    }
    let rows = vec![GarLogits { intrinsic: vec![0.0; K_INTR], interactive: vec![0.0], availability: avail }; 3];
    let targets = vec![Some(ActionId(1)), Some(ActionId(6)), Some(ActionId(3))];
    let loss = imitation_loss_value(&rows, &targets).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn loss_is_mean_of_per_term_cross_entropy() {
    // B=1, L=2, M=2: four rows
    let raw = [
        vec![0.1, -0.3, 0.7, 0.0, 1.2, -0.5, 0.4, 0.9],
        vec![1.0, 2.0, 0.0, -1.0, 0.5, 0.25, -0.75, 0.3],
        vec![-0.2, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2],
        vec![3.0, -3.0, 0.0, 0.0, 1.0, -1.0, 2.0, -2.0],
    ];
    let targets = [1usize, 7, 4, 0];
    let rows: Vec<GarLogits> = raw
        .iter()
        .map(|r| GarLogits::from_row(r, K_INTR, vec![true; r.len()]).unwrap())
        .collect();
    let oracle: f64 = raw
        .iter()
        .zip(targets)
        .map(|(r, t)| {
            let lse = r.iter().map(|v| v.exp()).sum::<f64>().ln();
            lse - r[t]
        })
        .sum::<f64>()
        / 4.0;
    let got = imitation_loss_value(&rows, &targets.map(|t| Some(ActionId(t)))).unwrap();
    assert!((got - oracle).abs() < 1e-10);
    assert!(matches!(imitation_loss_value(&rows, &[None; 4]), Err(ModelError::Numeric(_))));
}

/// Builds the window loss for a given parameter set.
fn window_loss(params: &Params, input: &TokenInput, allow: &[bool], n: usize, targets: &[Option<usize>]) -> f64 {
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params, false).unwrap();
    let logits = forward_logits(&mut g, &b, input, allow, None, n).unwrap();
    let loss = imitation_loss(&mut g, logits, targets, None).unwrap();
    g.value(loss).item()
}

#[test]
fn full_model_gradient_check() {
    let (l, n) = (2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let params = Params::init(tiny(l), &mut rng).unwrap();
    let input = random_input(&mut rng, l, n);
    let mask = sample_training_mask(&build_base_mask(l, n).unwrap(), 0.5, &mut rng).unwrap();
    let targets: Vec<Option<usize>> =
        (0..l * n).map(|k| if k % n == 2 { None } else { Some(rng.gen_range(0..K_INTR + n)) }).collect();

    let mut g = Graph::new();
    let b = Bound::new(&mut g, &params, true).unwrap();
    let logits = forward_logits(&mut g, &b, &input, mask.allow(), None, n).unwrap();
    let loss = imitation_loss(&mut g, logits, &targets, None).unwrap();
    let grads = g.backward(loss).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (idx, var) in b.vars().iter().enumerate() {
        let analytic = grads.get(*var).unwrap().to_vec();
        for k in 0..params.value(idx).len() {
            let mut p = params.clone();
            p.update(idx)[k] += h;
            let up = window_loss(&p, &input, mask.allow(), n, &targets);
            p.update(idx)[k] -= 2.0 * h;
            let down = window_loss(&p, &input, mask.allow(), n, &targets);
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn uncontrollable_labels_do_not_change_loss() {
    let (l, n) = (2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = Params::init(tiny(l), &mut rng).unwrap();
    let input = random_input(&mut rng, l, n);
    let allow = base_allow(l, n);
    // units 2 and 3 are uncontrollable: their rows carry no target
    let targets: Vec<Option<usize>> = (0..l * n).map(|k| (k % n < 2).then_some(k % K_INTR)).collect();
    let a = window_loss(&params, &input, &allow, n, &targets);
    // perturbing what an enemy "did" has no representation in the loss
    let mut other = targets.clone();
    other[3] = None;
    other[7] = None;
    let b = window_loss(&params, &input, &allow, n, &other);
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn hidden_unit_has_no_gradient_path_to_others_with_one_block() {
    let (l, n) = (2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let params = Params::init(ModelConfig { n_blocks: 1, ..tiny(l) }, &mut rng).unwrap();
    let input = random_input(&mut rng, l, n);
    let t = l * n;
    let hidden = 2; // unit 2 hidden from every other row at every timestep
    let mut allow = base_allow(l, n);
    for q in 0..t {
        for k in 0..t {
            if k % n == hidden && q % n != hidden {
                allow[q * t + k] = false;
            }
        }
    }
    // loss over intrinsic choices of units 0 and 1 only
    let mut g = Graph::new();
    let b = Bound::new(&mut g, &params, false).unwrap();
    let states = g.variable(input.states.clone()).unwrap();
    let lin = g.matmul(states, b.vars()[0]).unwrap();
    let lin = g.add_row(lin, b.vars()[1]).unwrap();
    let pos = g.gather_rows(b.vars()[2], &input.steps).unwrap();
    let x = g.add(lin, pos).unwrap();
    let h = encode(&mut g, &b, x, &allow, None).unwrap();
    let logits = gar_head(&mut g, &b, h, n).unwrap();
    let intr = g.slice_cols(logits, 0, K_INTR).unwrap();
    let targets: Vec<Option<usize>> = (0..t).map(|k| (k % n != hidden).then_some(1)).collect();
    let loss = g.cross_entropy(intr, &targets).unwrap();
    let grads = g.backward(loss).unwrap();
    let gs = grads.get(states).unwrap();
    for tok in (0..t).filter(|k| k % n == hidden) {
        assert!(gs[tok * D_STATE..(tok + 1) * D_STATE].iter().all(|v| *v == 0.0));
    }
    assert!(gs[..D_STATE].iter().any(|v| *v != 0.0));
}

#[test]
fn permutation_equivariance() {
    let (l, n) = (3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let params = Params::init(tiny(l), &mut rng).unwrap();
    for _ in 0..10 {
        let input = random_input(&mut rng, l, n);
        let mask = sample_training_mask(&build_base_mask(l, n).unwrap(), 0.4, &mut rng).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        // unit u moves to slot perm[u]
        let t = l * n;
        let tok = |k: usize| (k / n) * n + perm[k % n];
        let mut states = Tensor::zeros(&[t, D_STATE]);
        for k in 0..t {
            states.data_mut()[tok(k) * D_STATE..(tok(k) + 1) * D_STATE].copy_from_slice(input.states.row(k));
        }
        let mut allow = vec![false; t * t];
        for q in 0..t {
            for k in 0..t {
                allow[tok(q) * t + tok(k)] = mask.allow()[q * t + k];
            }
        }
        let permuted = TokenInput { states, steps: input.steps.clone() };
        let a = infer(&params, &input, mask.allow(), None, n).unwrap();
        let b = infer(&params, &permuted, &allow, None, n).unwrap();
        for k in 0..t {
            for c in 0..K_INTR {
                assert!((a.get2(k, c) - b.get2(tok(k), c)).abs() < 1e-9);
            }
            for j in 0..n {
                assert!((a.get2(k, K_INTR + j) - b.get2(tok(k), K_INTR + perm[j])).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn one_parameter_set_serves_any_unit_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let params = Params::init(tiny(2), &mut rng).unwrap();
    for n in [1, 2, 5, 9, 17] {
        let input = random_input(&mut rng, 2, n);
        let out = infer(&params, &input, &base_allow(2, n), None, n).unwrap();
        assert_eq!(out.shape(), &[2 * n, K_INTR + n]);
        let g = GarLogits::from_row(out.row(2 * n - 1), K_INTR, vec![true; K_INTR + n]).unwrap();
        let total: f64 = g.probabilities().unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn query_rows_match_full_forward() {
    let (l, n) = (3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let params = Params::init(tiny(l), &mut rng).unwrap();
    let input = random_input(&mut rng, l, n);
    let mask = sample_training_mask(&build_base_mask(l, n).unwrap(), 0.3, &mut rng).unwrap();
    let full = infer(&params, &input, mask.allow(), None, n).unwrap();
    let last: Vec<usize> = ((l - 1) * n..l * n).collect();
    let part = infer(&params, &input, mask.allow(), Some(&last), n).unwrap();
    for (r, &q) in last.iter().enumerate() {
        for c in 0..K_INTR + n {
            assert!((full.get2(q, c) - part.get2(r, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let params = Params::init(tiny(2), &mut rng).unwrap();
    let mut ckpt = Checkpoint::from_params(&params, 42);
    ckpt.arrays.push(("opt.extra".into(), Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap()));
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    let restored = back.params().unwrap();
    assert_eq!(restored.named_arrays(), params.named_arrays());

    let mut flipped = bytes.clone();
    flipped[40] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(ModelError::Checksum)));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]), Err(ModelError::Checksum)));
    let mut version = bytes.clone();
    version[8] = 9;
    assert!(matches!(Checkpoint::from_bytes(&version), Err(ModelError::Version { found: 9, .. })));
    assert!(matches!(Checkpoint::from_bytes(b"nonsense"), Err(ModelError::BadMagic)));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    write_checkpoint(&path, &ckpt).unwrap();
    assert_eq!(read_checkpoint(&path).unwrap(), ckpt);
}
