//! Miniature transformer encoder with a weight-tied MLM head.

mod checkpoint;
mod encoder;
mod optim;
mod params;
mod pretrain;
pub mod tape;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use encoder::{
    bind, collect_grads, compute_gradients, encode_batch, encoder_forward, mlm_forward,
    mlm_logits, BatchInput, Bound, DropoutCtx, ModelParams, ParamGrads,
};
pub use optim::{Adam, AdamConfig, AdamState};
pub use params::{glorot, Param, ParamStore};
pub use pretrain::{mask_for_mlm, pretrain_mlm, recovery_rate, MlmMasking, PretrainConfig};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: 2 layers, 4 heads, width 64.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_len: 64,
            dropout_p: 0.1,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout_p must be in [0, 1)".into()));
        }
        if self.vocab_size == 0 || self.max_len == 0 || self.d_ff == 0 {
            return Err(Error::Config("vocab_size, max_len and d_ff must be positive".into()));
        }
        Ok(())
    }
}

/// Which parameter group stays fixed during fine-tuning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    None,
    /// Head-exclusive parameters (dense, layer norm, decoder bias). The tied
    /// embedding stays trainable through the encoder path.
    #[default]
    MlmHead,
    /// Embeddings and every encoder block.
    Encoder,
}

impl FreezePolicy {
    pub fn name(self) -> &'static str {
        match self {
            FreezePolicy::None => "none",
            FreezePolicy::MlmHead => "mlm_head",
            FreezePolicy::Encoder => "encoder",
        }
    }
}

impl std::str::FromStr for FreezePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FreezePolicy::None),
            "mlm_head" => Ok(FreezePolicy::MlmHead),
            "encoder" => Ok(FreezePolicy::Encoder),
            _ => Err(Error::Config(format!(
                "unknown freeze policy {s:?} (expected none, mlm_head or encoder)"
            ))),
        }
    }
}

/// Parameters exclusive to the MLM head.
pub fn is_head_param(name: &str) -> bool {
    name.starts_with("head.")
}

/// Embeddings and encoder blocks.
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("embed.") || name.starts_with("layer")
}

pub fn set_freeze(params: &mut ModelParams, policy: FreezePolicy) {
    for p in params.store.iter_mut() {
        p.frozen = match policy {
            FreezePolicy::None => false,
            FreezePolicy::MlmHead => is_head_param(&p.name),
            FreezePolicy::Encoder => is_encoder_param(&p.name),
        };
    }
}
