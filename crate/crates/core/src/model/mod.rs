//! The network: per-token state embedding, mask-gated pre-norm transformer
//! blocks over `L·N` tokens, and the pairwise action head.
//!
//! Everything is expressed on a [`Graph`](crate::numeric::Graph) so the
//! same code path serves training (with gradients) and execution.

mod checkpoint;
mod gar;
mod net;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gar::{combined_logits, imitation_loss, imitation_loss_value, select_action, GarLogits, Selection};
pub use net::{embed, encode, forward_logits, gar_head, infer, intrinsic_head, Bound, TokenInput};
pub use params::Params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::K_INTR;
use crate::arena::D_STATE;
use crate::numeric::NumericError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input mismatch: {0}")]
    Input(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("no available action")]
    NoAvailableAction,
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// Architecture hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub d_hidden: usize,
    pub n_heads: usize,
    /// Context length `L` in timesteps.
    pub context: usize,
    pub d_state: usize,
    pub k_intr: usize,
}

impl ModelConfig {
    /// Full-size setting: 6 blocks, width 128, 8 heads, 10 timesteps.
    pub fn full() -> Self {
        ModelConfig { n_blocks: 6, d_hidden: 128, n_heads: 8, context: 10, d_state: D_STATE, k_intr: K_INTR }
    }

    /// Desk-scale setting: 2 blocks, width 64, 4 heads, 5 timesteps.
    pub fn desk() -> Self {
        ModelConfig { n_blocks: 2, d_hidden: 64, n_heads: 4, context: 5, d_state: D_STATE, k_intr: K_INTR }
    }

    pub fn with_context(self, context: usize) -> Self {
        ModelConfig { context, ..self }
    }

    pub fn d_head(&self) -> usize {
        self.d_hidden / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_blocks == 0 || self.d_hidden == 0 || self.n_heads == 0 {
            return bad(format!("blocks, width and heads must be positive: {self:?}"));
        }
        if self.d_hidden % self.n_heads != 0 {
            return bad(format!("width {} not divisible by {} heads", self.d_hidden, self.n_heads));
        }
        if self.context == 0 || self.d_state == 0 || self.k_intr == 0 {
            return bad(format!("context, state width and intrinsic count must be positive: {self:?}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
