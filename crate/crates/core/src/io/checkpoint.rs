//! Versioned JSON checkpoints carrying the full trainer state: both clouds,
//! optimizer moments, densification accumulators, and RNG streams, so a
//! resumed run continues bitwise-identically.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GsError, Result};
use crate::train::{TrainConfig, TrainerState};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub state: TrainerState,
}

pub fn save_checkpoint(path: &Path, config: &TrainConfig, state: &TrainerState) -> Result<()> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        state: state.clone(),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_vec(&ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let probe: serde_json::Value = serde_json::from_slice(&bytes)?;
    match probe.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == CHECKPOINT_VERSION as u64 => {}
        Some(v) => return Err(GsError::UnknownVersion(format!("checkpoint version {v}"))),
        None => return Err(GsError::parse("checkpoint missing version")),
    }
    Ok(serde_json::from_slice(&bytes)?)
}

/// Standard checkpoint file name for an iteration.
pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("ckpt_{iteration:07}.json"))
}

/// All checkpoints in a directory as (iteration, path), ascending.
pub fn list_checkpoints(dir: &Path) -> Vec<(u64, PathBuf)> {
    let mut out = Vec::new();
    let Ok(entries) = fs::read_dir(dir) else {
        return out;
    };
    for entry in entries.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(iter) = name
            .strip_prefix("ckpt_")
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            out.push((iter, entry.path()));
        }
    }
    out.sort();
    out
}

/// The newest checkpoint in a directory, if any.
pub fn latest_checkpoint(dir: &Path) -> Option<(u64, PathBuf)> {
    list_checkpoints(dir).pop()
}
