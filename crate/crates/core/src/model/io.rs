use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Network, Variant};
use crate::error::{Error, Result};
use crate::numerics::checkpoint;

/// Metadata stored next to a checkpoint and checked at load time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub variant: Variant,
    pub seed: u64,
    /// Number of completed epochs.
    pub epoch: usize,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn save_model(net: &Network<f32>, sidecar: &Sidecar, path: &Path) -> Result<()> {
    checkpoint::save(net.params(), path)?;
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    let side = sidecar_path(path);
    std::fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

/// Loads a checkpoint, rejecting it when the vocabulary hash differs from `vocab_hash`.
pub fn load_model(path: &Path, vocab_hash: Option<&str>) -> Result<(Network<f32>, Sidecar)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: side.clone(),
        source: e,
    })?;
    if let Some(h) = vocab_hash {
        if h != sidecar.vocab_hash {
            return Err(Error::Checkpoint(format!(
                "{} was trained with a different vocabulary",
                path.display()
            )));
        }
    }
    let mut net = Network::new(sidecar.config.clone(), 0)?;
    net.params_mut().assign_named(checkpoint::load(path)?)?;
    Ok((net, sidecar))
}
