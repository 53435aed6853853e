use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::encoder::ModelParams;
use crate::model::optim::AdamState;
use crate::model::params::ParamStore;
use crate::model::ModelConfig;
use crate::verbalizers::HeadVariant;

pub const CHECKPOINT_FORMAT: &str = "mav-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON container for model (and optionally head) parameters, freeze flags,
/// optimizer moments and the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub params: ParamStore,
    #[serde(default)]
    pub head: Option<HeadVariant>,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
    #[serde(default)]
    pub head_optimizer: Option<AdamState>,
    pub step: u64,
}

impl Checkpoint {
    pub fn new(model: &ModelParams, vocab_hash: impl Into<String>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            vocab_hash: vocab_hash.into(),
            params: model.store.clone(),
            head: None,
            optimizer: None,
            head_optimizer: None,
            step: 0,
        }
    }

    pub fn model(&self) -> Result<ModelParams> {
        ModelParams::from_store(self.config.clone(), self.params.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads and, when `expected_vocab_hash` is given, checks it matches.
    pub fn load(path: &Path, expected_vocab_hash: Option<&str>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        if let Some(expected) = expected_vocab_hash {
            if ck.vocab_hash != expected {
                return Err(Error::VocabMismatch {
                    expected: ck.vocab_hash,
                    found: expected.to_string(),
                });
            }
        }
        ModelParams::from_store(ck.config.clone(), ck.params.clone())?;
        Ok(ck)
    }
}
