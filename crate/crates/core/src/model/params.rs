use std::sync::Arc;

use rand::Rng;

use super::{ModelConfig, ModelError};
use crate::numeric::Tensor;

/// Named parameter tensors in a fixed order.
///
/// Values sit behind `Arc` so binding them into a graph is free; an
/// optimizer update goes through [`Params::update`], which copies on write
/// only if a graph still holds the old value.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    config: ModelConfig,
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
}

/// How a parameter is initialised.
#[derive(Clone, Copy)]
enum Init {
    Zero,
    One,
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier,
    /// Uniform in ±0.02.
    Small,
}

pub(crate) const PER_BLOCK: usize = 13;

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, s, k) = (cfg.d_hidden, cfg.d_state, cfg.k_intr);
    let mut out = vec![
        ("embed.w".to_string(), vec![s, d], Init::Xavier),
        ("embed.b".to_string(), vec![d], Init::Zero),
        ("embed.pos".to_string(), vec![cfg.context, d], Init::Small),
    ];
    for b in 0..cfg.n_blocks {
        let p = |n: &str| format!("block{b}.{n}");
        out.extend([
            (p("ln1.g"), vec![d], Init::One),
            (p("ln1.b"), vec![d], Init::Zero),
            (p("attn.wq"), vec![d, d], Init::Xavier),
            (p("attn.wk"), vec![d, d], Init::Xavier),
            (p("attn.wv"), vec![d, d], Init::Xavier),
            (p("attn.wo"), vec![d, d], Init::Xavier),
            (p("attn.bo"), vec![d], Init::Zero),
            (p("ln2.g"), vec![d], Init::One),
            (p("ln2.b"), vec![d], Init::Zero),
            (p("ff.w1"), vec![d, 4 * d], Init::Xavier),
            (p("ff.b1"), vec![4 * d], Init::Zero),
            (p("ff.w2"), vec![4 * d, d], Init::Xavier),
            (p("ff.b2"), vec![d], Init::Zero),
        ]);
    }
    out.extend([
        ("final_ln.g".to_string(), vec![d], Init::One),
        ("final_ln.b".to_string(), vec![d], Init::Zero),
        ("head.intr.w".to_string(), vec![d, k], Init::Xavier),
        ("head.intr.b".to_string(), vec![k], Init::Zero),
        // the pair map w·(h_i ⊕ h_j) + b split into its executor and receiver halves
        ("head.pair.w_self".to_string(), vec![d, 1], Init::Xavier),
        ("head.pair.w_other".to_string(), vec![d, 1], Init::Xavier),
        ("head.pair.b".to_string(), vec![1], Init::Zero),
    ]);
    out
}

// fixed offsets into the layout
pub(crate) const EMBED_W: usize = 0;
pub(crate) const EMBED_B: usize = 1;
pub(crate) const EMBED_POS: usize = 2;
pub(crate) const BLOCKS: usize = 3;

pub(crate) mod block {
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const WQ: usize = 2;
    pub const WK: usize = 3;
    pub const WV: usize = 4;
    pub const WO: usize = 5;
    pub const BO: usize = 6;
    pub const LN2_G: usize = 7;
    pub const LN2_B: usize = 8;
    pub const FF_W1: usize = 9;
    pub const FF_B1: usize = 10;
    pub const FF_W2: usize = 11;
    pub const FF_B2: usize = 12;
}

/// Offsets of the tail parameters relative to `BLOCKS + n_blocks·PER_BLOCK`.
pub(crate) mod tail {
    pub const LN_G: usize = 0;
    pub const LN_B: usize = 1;
    pub const INTR_W: usize = 2;
    pub const INTR_B: usize = 3;
    pub const PAIR_SELF: usize = 4;
    pub const PAIR_OTHER: usize = 5;
    pub const PAIR_B: usize = 6;
}

impl Params {
    /// Randomly initialised parameters.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (name, shape, init) in layout(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Zero => vec![0.0; n],
                Init::One => vec![1.0; n],
                Init::Small => (0..n).map(|_| rng.gen_range(-0.02..0.02)).collect(),
                Init::Xavier => {
                    let a = (6.0 / (shape[0] + shape[shape.len() - 1]) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a)).collect()
                }
            };
            names.push(name);
            values.push(Arc::new(Tensor::new(shape, data)?));
        }
        Ok(Params { config, names, values })
    }

    /// All-zero parameters (layer-norm gains included).
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (names, values) = layout(&config)
            .into_iter()
            .map(|(name, shape, _)| (name, Arc::new(Tensor::zeros(&shape))))
            .unzip();
        Ok(Params { config, names, values })
    }

    /// Rebuilds parameters from named arrays, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_named(config: ModelConfig, arrays: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(&config);
        if arrays.len() != expected.len() {
            return Err(ModelError::Format(format!(
                "expected {} parameter arrays, found {}",
                expected.len(),
                arrays.len()
            )));
        }
        let mut names = Vec::new();
        let mut values = Vec::new();
        for ((name, t), (want, shape, _)) in arrays.into_iter().zip(expected) {
            if name != want || t.shape() != shape.as_slice() {
                return Err(ModelError::Format(format!(
                    "parameter {name} {:?} does not match expected {want} {shape:?}",
                    t.shape()
                )));
            }
            names.push(name);
            values.push(Arc::new(t));
        }
        Ok(Params { config, names, values })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, idx: usize) -> &Tensor {
        &self.values[idx]
    }

    pub(crate) fn shared(&self, idx: usize) -> Arc<Tensor> {
        Arc::clone(&self.values[idx])
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &*self.values[i])
    }

    /// Replaces a parameter by name; the shape must stay the same.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<(), ModelError> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ModelError::Input(format!("no parameter named {name}")))?;
        if t.shape() != self.values[i].shape() {
            return Err(ModelError::Input(format!(
                "parameter {name}: shape {:?} != {:?}",
                t.shape(),
                self.values[i].shape()
            )));
        }
        self.values[i] = Arc::new(t);
        Ok(())
    }

    /// Mutable access to the raw data of parameter `idx`.
    pub fn update(&mut self, idx: usize) -> &mut [f64] {
        Arc::make_mut(&mut self.values[idx]).data_mut()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn named_arrays(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.values.iter().map(|v| (**v).clone())).collect()
    }
}
