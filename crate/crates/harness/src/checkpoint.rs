//! Versioned binary checkpoint: magic, format version, then a bincode body
//! holding the resolved config, the full trainer (networks, optimizers,
//! temperature, buffer, environment and every RNG) and the episode log.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use muscle_rl_core::trainer::{EpisodeRecord, Trainer};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::output::write_atomic;

pub const MAGIC: &[u8; 8] = b"MRLCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub config: RunConfig,
    pub trainer: Trainer,
    pub records: Vec<EpisodeRecord>,
}

/// Borrowed view with the same encoding as [`Checkpoint`], so saving does not
/// copy the replay buffer.
#[derive(Serialize)]
pub struct CheckpointRef<'a> {
    pub config_hash: &'a str,
    pub config: &'a RunConfig,
    pub trainer: &'a Trainer,
    pub records: &'a [EpisodeRecord],
}

impl CheckpointRef<'_> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(1 << 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        bincode::serialize_into(&mut out, self)?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

impl Checkpoint {
    pub fn as_ref(&self) -> CheckpointRef<'_> {
        CheckpointRef { config_hash: &self.config_hash, config: &self.config, trainer: &self.trainer, records: &self.records }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.as_ref().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            bail!("not a checkpoint file");
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes"));
        if version != VERSION {
            bail!("checkpoint format version {version} is not supported (expected {VERSION})");
        }
        let ck: Checkpoint = bincode::deserialize(&bytes[12..]).context("decoding checkpoint body")?;
        if ck.config.hash() != ck.config_hash {
            bail!("checkpoint config hash does not match its stored config");
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.as_ref().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
    }
}
