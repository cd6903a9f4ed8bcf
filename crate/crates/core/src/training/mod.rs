//! Supervised pretraining: mask modes, the RMSProp update with decoupled
//! weight decay, the per-batch step and the resumable training loop.

mod optim;

pub use optim::RmsProp;

use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{sample_windows, DataError, Dataset, TrainingWindow};
use crate::masks::{build_base_mask, build_local_mask, sample_ratio, sample_training_mask, AttentionMask, MaskError};
use crate::model::{
    forward_logits, imitation_loss, write_checkpoint, Bound, Checkpoint, ModelConfig, ModelError, Params,
};
use crate::numeric::{Graph, NumericError, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("training i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("evaluation failed: {0}")]
    Eval(String),
}

/// How the attention mask of a training window is built.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MaskMode {
    /// Base (block-causal) mask only.
    None,
    /// Drop non-self links with this probability.
    Fixed(f64),
    /// Drop ratio drawn uniformly from `[0, 1]` per window.
    Random,
    /// Locality mask from the recorded visibility sets.
    Local,
}

impl From<MaskMode> for String {
    fn from(m: MaskMode) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for MaskMode {
    type Error = TrainError;

    fn try_from(s: String) -> Result<Self, TrainError> {
        s.parse()
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskMode::None => write!(f, "none"),
            MaskMode::Fixed(r) => write!(f, "fixed:{r}"),
            MaskMode::Random => write!(f, "random"),
            MaskMode::Local => write!(f, "local"),
        }
    }
}

impl FromStr for MaskMode {
    type Err = TrainError;

    /// `none`, `random`, `local`, `fixed:<ratio>` or a bare ratio.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TrainError::Config(format!("mask mode {s:?}: expected none, random, local or fixed:<ratio>"));
        match s {
            "none" => Ok(MaskMode::None),
            "random" => Ok(MaskMode::Random),
            "local" => Ok(MaskMode::Local),
            _ => {
                let r: f64 = s.strip_prefix("fixed:").unwrap_or(s).parse().map_err(|_| bad())?;
                if (0.0..=1.0).contains(&r) {
                    Ok(MaskMode::Fixed(r))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// RMSProp smoothing constant.
    pub rms_alpha: f64,
    pub rms_eps: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub mask_mode: MaskMode,
    /// Evaluate every this many steps (0 = never).
    pub eval_every: u64,
    /// Save a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk preset: context 5, batch 32, random masking.
    pub fn desk() -> Self {
        TrainConfig {
            model: ModelConfig::desk(),
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            rms_alpha: 0.99,
            rms_eps: 1e-8,
            batch_size: 32,
            steps: 2000,
            mask_mode: MaskMode::Random,
            eval_every: 0,
            checkpoint_every: 0,
            seed: 0,
        }
    }

    pub fn context(&self) -> usize {
        self.model.context
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.rms_alpha) || !(self.rms_eps > 0.0) {
            return bad("weight decay >= 0, smoothing in [0, 1), epsilon > 0");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if let MaskMode::Fixed(r) = self.mask_mode {
            if !(0.0..=1.0).contains(&r) {
                return bad("mask ratio outside [0, 1]");
            }
        }
        Ok(())
    }
}

/// Attention mask for one training window under `mode`, with absent tokens
/// cut off. Also returns the drop ratio that was used, if any.
pub fn window_mask(
    w: &TrainingWindow,
    mode: MaskMode,
    rng: &mut ChaCha8Rng,
) -> Result<(AttentionMask, Option<f64>), TrainError> {
    let base = build_base_mask(w.l, w.n)?;
    let (mut mask, ratio) = match mode {
        MaskMode::None => (base, None),
        MaskMode::Fixed(r) => (sample_training_mask(&base, r, rng)?, Some(r)),
        MaskMode::Random => {
            let r = sample_ratio(rng);
            (sample_training_mask(&base, r, rng)?, Some(r))
        }
        MaskMode::Local => (build_local_mask(&w.visibility, w.l, w.n)?, None),
    };
    mask.apply_presence(&w.present);
    Ok((mask, ratio))
}

/// Loss, accuracy counts and (optionally) parameter gradients of one window.
#[derive(Clone, Debug)]
pub struct WindowPass {
    pub loss: f64,
    pub labelled: usize,
    pub correct: usize,
    pub grads: Option<Vec<Vec<f64>>>,
}

/// Index of the largest allowed entry, lowest index on ties.
fn masked_argmax(row: &[f64], allow: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, (&v, &a)) in row.iter().zip(allow).enumerate() {
        if a && best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

pub(crate) fn count_correct(logits: &Tensor, targets: &[Option<usize>], availability: &[bool]) -> usize {
    let width = logits.rows_cols().1;
    targets
        .iter()
        .enumerate()
        .filter(|(r, t)| {
            t.is_some_and(|t| masked_argmax(logits.row(*r), &availability[r * width..(r + 1) * width]) == Some(t))
        })
        .count()
}

/// Gradients of a graph's leaves, in order, zero where nothing flowed.
pub(crate) fn collect_grads(g: &Graph, b: &Bound, params: &Params, loss: crate::numeric::Var) -> Result<Vec<Vec<f64>>, TrainError> {
    let grads = g.backward(loss)?;
    Ok(b.vars()
        .iter()
        .enumerate()
        .map(|(k, v)| grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; params.value(k).len()]))
        .collect())
}

/// Forward (and backward when `with_grad`) of one window under `allow`.
pub fn window_pass(
    params: &Params,
    w: &TrainingWindow,
    allow: &[bool],
    with_grad: bool,
) -> Result<WindowPass, TrainError> {
    let labelled = w.labelled();
    if labelled == 0 {
        return Ok(WindowPass { loss: 0.0, labelled: 0, correct: 0, grads: None });
    }
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params, with_grad)?;
    let logits = forward_logits(&mut g, &b, &w.input(), allow, None, w.n)?;
    let loss = imitation_loss(&mut g, logits, &w.targets, Some(&w.availability))?;
    let correct = count_correct(g.value(logits), &w.targets, &w.availability);
    let value = g.value(loss).item();
    let grads = if with_grad { Some(collect_grads(&g, &b, params, loss)?) } else { None };
    Ok(WindowPass { loss: value, labelled, correct, grads })
}

/// Per-step metrics; loss is the mean over every labelled token of the batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
    pub labelled: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval_win_rate: Option<f64>,
}

/// Combines per-window passes into a batch mean (weights = labelled
/// tokens) in window order, so the result does not depend on scheduling.
pub(crate) fn reduce(passes: Vec<WindowPass>, n_params: usize) -> (f64, usize, usize, Vec<Vec<f64>>) {
    let total: usize = passes.iter().map(|p| p.labelled).sum();
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(n_params);
    let mut loss = 0.0;
    let mut correct = 0;
    for p in passes {
        if p.labelled == 0 {
            continue;
        }
        let wgt = p.labelled as f64 / total as f64;
        loss += wgt * p.loss;
        correct += p.correct;
        if let Some(gs) = p.grads {
            if grads.is_empty() {
                grads = gs.into_iter().map(|g| g.into_iter().map(|v| v * wgt).collect()).collect();
            } else {
                for (acc, g) in grads.iter_mut().zip(gs) {
                    acc.iter_mut().zip(g).for_each(|(a, v)| *a += wgt * v);
                }
            }
        }
    }
    (loss, total, correct, grads)
}

/// One optimisation step on `batch`; windows are processed independently
/// (so mixed unit counts are fine) and in parallel.
pub fn train_step(
    params: &mut Params,
    opt: &mut RmsProp,
    batch: &[TrainingWindow],
    cfg: &TrainConfig,
    step: u64,
    rng: &mut ChaCha8Rng,
) -> Result<StepMetrics, TrainError> {
    let mut masks = Vec::with_capacity(batch.len());
    let mut ratios = Vec::new();
    for w in batch {
        let (m, r) = window_mask(w, cfg.mask_mode, rng)?;
        masks.push(m);
        ratios.extend(r);
    }
    let snapshot = &*params;
    let passes = batch
        .par_iter()
        .zip(masks.par_iter())
        .map(|(w, m)| window_pass(snapshot, w, m.allow(), true))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| match e {
            TrainError::Numeric(n) | TrainError::Model(ModelError::Numeric(n)) => {
                TrainError::NonFinite { step, detail: n.to_string() }
            }
            other => other,
        })?;
    let (loss, labelled, correct, grads) = reduce(passes, params.len());
    if !loss.is_finite() {
        return Err(TrainError::NonFinite { step, detail: format!("batch loss {loss}") });
    }
    if labelled > 0 {
        opt.apply(params, &grads, cfg.learning_rate, cfg.weight_decay)?;
    }
    let mask_ratio = (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64);
    Ok(StepMetrics {
        step,
        loss,
        accuracy: if labelled == 0 { 0.0 } else { correct as f64 / labelled as f64 },
        labelled,
        mask_ratio,
        eval_win_rate: None,
    })
}

/// Loss and accuracy of fixed windows under the base mask (no update).
pub fn evaluate_windows(params: &Params, windows: &[TrainingWindow]) -> Result<(f64, f64), TrainError> {
    let passes = windows
        .par_iter()
        .map(|w| {
            let mut m = build_base_mask(w.l, w.n)?;
            m.apply_presence(&w.present);
            window_pass(params, w, m.allow(), false)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (loss, labelled, correct, _) = reduce(passes, params.len());
    Ok((loss, if labelled == 0 { 0.0 } else { correct as f64 / labelled as f64 }))
}

/// Random stream for step `step`: independent of how the run was split
/// into resumed segments.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Where a run writes, and where it picks up from.
#[derive(Default)]
pub struct RunOptions<'a> {
    pub out_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    /// Called every `eval_every` steps with the current parameters; returns
    /// the decentralized win rate used to keep the best checkpoint.
    pub evaluate: Option<Box<dyn FnMut(&Params) -> Result<f64, TrainError> + 'a>>,
    /// Print a progress line every this many steps (0 = silent).
    pub log_every: u64,
}

pub struct TrainOutcome {
    pub params: Params,
    pub optimizer: RmsProp,
    pub metrics: Vec<StepMetrics>,
    /// Parameters with the best evaluation score, if any evaluation ran.
    pub best: Option<(Params, f64, u64)>,
    pub step: u64,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

pub fn checkpoint_with_optimizer(params: &Params, opt: &RmsProp, step: u64) -> Checkpoint {
    let mut ck = Checkpoint::from_params(params, step);
    ck.arrays.extend(opt.named_arrays(params));
    ck
}

fn append_metrics(path: &Path, m: &StepMetrics) -> Result<(), TrainError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(m).map_err(|e| TrainError::Config(e.to_string()))?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Generic loop: `step_fn` performs one update and reports its metrics.
/// Shared by every learner so they run on the same optimizer and budget.
pub(crate) fn run_loop<'a, F>(
    cfg: &TrainConfig,
    mut params: Params,
    mut opt: RmsProp,
    start: u64,
    mut opts: RunOptions<'a>,
    mut step_fn: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&mut Params, &mut RmsProp, u64, &mut ChaCha8Rng) -> Result<StepMetrics, TrainError>,
{
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut metrics = Vec::new();
    let mut best: Option<(Params, f64, u64)> = None;
    for step in start..cfg.steps {
        let mut rng = step_rng(cfg.seed, step);
        let mut m = step_fn(&mut params, &mut opt, step, &mut rng)?;
        let done = step + 1;
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 {
            if let Some(eval) = opts.evaluate.as_mut() {
                let score = eval(&params)?;
                m.eval_win_rate = Some(score);
                if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
                    best = Some((params.clone(), score, done));
                    if let Some(dir) = &opts.out_dir {
                        write_checkpoint(&dir.join(BEST_CHECKPOINT), &Checkpoint::from_params(&params, done))?;
                    }
                }
            }
        }
        if opts.log_every > 0 && done % opts.log_every == 0 {
            eprintln!("step {done:>6}  loss {:.4}  acc {:.3}", m.loss, m.accuracy);
        }
        if let Some(dir) = &opts.out_dir {
            append_metrics(&dir.join(METRICS_FILE), &m)?;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                write_checkpoint(&dir.join(format!("step_{done:08}.ckpt")), &checkpoint_with_optimizer(&params, &opt, done))?;
            }
        }
        metrics.push(m);
    }
    let step = cfg.steps.max(start);
    if let Some(dir) = &opts.out_dir {
        write_checkpoint(&dir.join(LAST_CHECKPOINT), &checkpoint_with_optimizer(&params, &opt, step))?;
    }
    Ok(TrainOutcome { params, optimizer: opt, metrics, best, step })
}

/// Parameters and optimizer state to start from: fresh (seeded) or resumed.
pub(crate) fn initial_state(cfg: &TrainConfig, resume: Option<&Checkpoint>) -> Result<(Params, RmsProp, u64), TrainError> {
    match resume {
        Some(ck) => {
            if ck.config != cfg.model {
                return Err(TrainError::Config(format!("checkpoint model {:?} differs from {:?}", ck.config, cfg.model)));
            }
            let params = ck.params()?;
            let opt = RmsProp::from_checkpoint(cfg.rms_alpha, cfg.rms_eps, &params, ck)?;
            Ok((params, opt, ck.step))
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1417);
            let params = Params::init(cfg.model, &mut rng)?;
            let opt = RmsProp::new(cfg.rms_alpha, cfg.rms_eps, &params);
            Ok((params, opt, 0))
        }
    }
}

/// Trains the mask-based model on `dataset`. Deterministic given
/// `cfg.seed`; a resumed run reproduces the uninterrupted one.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, mut opts: RunOptions<'_>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if dataset.index().total() == 0 {
        return Err(TrainError::Data(DataError::Empty));
    }
    let (params, opt, start) = initial_state(cfg, opts.resume.take().as_ref())?;
    let l = cfg.context();
    run_loop(cfg, params, opt, start, opts, |params, opt, step, rng| {
        let batch = sample_windows(dataset, cfg.batch_size, l, rng)?;
        train_step(params, opt, &batch, cfg, step, rng)
    })
}

#[cfg(test)]
mod tests;
