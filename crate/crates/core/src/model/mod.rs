//! Encoder/classifier network with explicit forward and backward passes.

mod network;
mod optim;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use network::{
    backward, cross_entropy, forward, Activation, Architecture, Dense, ForwardCache, ModelParams, PROB_FLOOR,
};
pub use optim::{OptimizerKind, OptimizerSettings, OptimizerState};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Model weights and optimizer state after `epoch` completed epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub epoch: usize,
    pub params: ModelParams,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(epoch: usize, params: ModelParams, optimizer: Option<OptimizerState>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            epoch,
            params,
            optimizer,
        }
    }

    /// Conventional file name for a snapshot taken at `epoch`.
    pub fn file_name(prefix: &str, epoch: usize) -> String {
        format!("{prefix}_epoch_{epoch:03}.json")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.format_version
            )));
        }
        ckpt.params.check()?;
        Ok(ckpt)
    }
}
