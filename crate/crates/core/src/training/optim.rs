use super::TrainError;
use crate::model::{Checkpoint, Params};
use crate::numeric::Tensor;

const STATE_PREFIX: &str = "rmsprop.";

/// RMSProp: `s ← α·s + (1−α)·g²`, `θ ← θ − lr·g/(√s + ε)`, followed by
/// decoupled weight decay `θ ← θ − lr·λ·θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub alpha: f64,
    pub eps: f64,
    square: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(alpha: f64, eps: f64, params: &Params) -> Self {
        let square = (0..params.len()).map(|k| vec![0.0; params.value(k).len()]).collect();
        RmsProp { alpha, eps, square }
    }

    pub fn apply(&mut self, params: &mut Params, grads: &[Vec<f64>], lr: f64, weight_decay: f64) -> Result<(), TrainError> {
        if grads.len() != params.len() {
            return Err(TrainError::Config(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        if lr == 0.0 {
            return Ok(());
        }
        for (k, g) in grads.iter().enumerate() {
            let s = &mut self.square[k];
            let theta = params.update(k);
            if g.len() != theta.len() {
                return Err(TrainError::Config(format!("gradient {k} has {} entries for {}", g.len(), theta.len())));
            }
            for i in 0..theta.len() {
                s[i] = self.alpha * s[i] + (1.0 - self.alpha) * g[i] * g[i];
                theta[i] -= lr * g[i] / (s[i].sqrt() + self.eps);
                theta[i] -= lr * weight_decay * theta[i];
            }
        }
        Ok(())
    }

    /// Running squares, named after their parameters.
    pub fn named_arrays(&self, params: &Params) -> Vec<(String, Tensor)> {
        params
            .names()
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let shape = params.value(k).shape().to_vec();
                (format!("{STATE_PREFIX}{name}"), Tensor::new(shape, self.square[k].clone()).expect("same shape as parameter"))
            })
            .collect()
    }

    /// State saved by [`named_arrays`](Self::named_arrays); a checkpoint
    /// without it starts from zero.
    pub fn from_checkpoint(alpha: f64, eps: f64, params: &Params, ck: &Checkpoint) -> Result<Self, TrainError> {
        let mut opt = Self::new(alpha, eps, params);
        for (k, name) in params.names().iter().enumerate() {
            if let Some(t) = ck.array(&format!("{STATE_PREFIX}{name}")) {
                if t.len() != opt.square[k].len() {
                    return Err(TrainError::Config(format!("optimizer state for {name} has the wrong size")));
                }
                opt.square[k] = t.data().to_vec();
            }
        }
        Ok(opt)
    }
}
