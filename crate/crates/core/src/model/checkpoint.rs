use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Hyperparams, ModelParams};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "activemix-params";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model: hyperparameters, log parameters and the fingerprint of
/// the vocabulary they index. Floats are written with shortest round-trip
/// formatting and parsed exactly, so a reload reproduces every bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub vocabulary_hash: String,
    pub hyperparams: Hyperparams,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(vocab: &Vocabulary, hyperparams: Hyperparams, params: ModelParams) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            vocabulary_hash: vocab.fingerprint(),
            hyperparams,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format `{}`", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", c.version)));
        }
        if c.params.k() != c.hyperparams.k() || c.params.n_terms() != c.hyperparams.n_terms() {
            return Err(Error::Checkpoint("parameter shape disagrees with hyperparameters".into()));
        }
        c.params
            .validate(1e-9)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// Fails unless the checkpoint was written against `vocab`.
    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        if self.vocabulary_hash != vocab.fingerprint() {
            return Err(Error::Checkpoint("vocabulary does not match the checkpoint".into()));
        }
        Ok(())
    }
}
