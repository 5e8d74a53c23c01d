use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::agent::Trainer;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to continue a run: the trainer carries parameters,
/// optimizer moments, buffers and RNG state.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: u64,
    pub family_fingerprint: u64,
    pub trainer: Trainer,
}

impl Checkpoint {
    pub fn new(trainer: &Trainer) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: trainer.config.hash(),
            family_fingerprint: trainer.family.fingerprint(),
            trainer: trainer.clone(),
        }
    }
}

/// Writes atomically: a crash leaves either the old file or the new one.
pub fn save(path: &Path, trainer: &Trainer) -> Result<()> {
    let bytes = bincode::serialize(&Checkpoint::new(trainer))?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint and checks its internal consistency.
pub fn load(path: &Path) -> Result<Trainer> {
    let bytes = fs::read(path)?;
    let ck: Checkpoint = bincode::deserialize(&bytes)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Mismatch(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            ck.version
        )));
    }
    if ck.trainer.family.fingerprint() != ck.family_fingerprint {
        return Err(Error::Mismatch("checkpoint family does not match its fingerprint".into()));
    }
    if ck.trainer.config.hash() != ck.config_hash {
        return Err(Error::Mismatch("checkpoint config does not match its hash".into()));
    }
    Ok(ck.trainer)
}

/// Loads a checkpoint that must have been produced by `config`.
pub fn load_for(path: &Path, config: &ExperimentConfig) -> Result<Trainer> {
    let trainer = load(path)?;
    if trainer.config.hash() != config.hash() {
        return Err(Error::Mismatch(format!(
            "checkpoint {} was written with a different configuration",
            path.display()
        )));
    }
    Ok(trainer)
}
