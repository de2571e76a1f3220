//! Versioned checkpoint file: both agents' parameter blocks, the word
//! statistics, the baseline tracker and the training progress, stored as one
//! JSON document. Floats are written in shortest round-trip form, so
//! `save(load(bytes)) == bytes`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::Agents;
use crate::error::{io_at, Error, Result};
use crate::nn::ParamStore;
use crate::tfidf::FrequencyStats;
use crate::trainer::{BaselineTracker, TrainState};

pub const CHECKPOINT_VERSION: u32 = 1;
const KIND: &str = "tpg-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockData {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub kind: String,
    pub format_version: u32,
    pub epochs_completed: usize,
    pub qgen: Vec<BlockData>,
    pub guesser: Vec<BlockData>,
    pub stats: FrequencyStats,
    pub baseline: BaselineTracker,
}

fn blocks_of(store: &ParamStore) -> Vec<BlockData> {
    store
        .blocks()
        .iter()
        .map(|b| BlockData { name: b.name.clone(), rows: b.rows, cols: b.cols, values: b.value.clone() })
        .collect()
}

fn restore(store: &mut ParamStore, blocks: &[BlockData], which: &str) -> Result<()> {
    if blocks.len() != store.blocks().len() {
        return Err(Error::Compatibility(format!(
            "{which}: checkpoint has {} blocks, model has {}",
            blocks.len(),
            store.blocks().len()
        )));
    }
    for data in blocks {
        let id = store
            .id(&data.name)
            .ok_or_else(|| Error::Compatibility(format!("{which}: unknown block `{}`", data.name)))?;
        let block = store.block_mut(id);
        if block.rows != data.rows || block.cols != data.cols || data.values.len() != data.rows * data.cols {
            return Err(Error::Compatibility(format!(
                "block `{}`: checkpoint shape {}x{} ({} values), model shape {}x{}",
                data.name,
                data.rows,
                data.cols,
                data.values.len(),
                block.rows,
                block.cols
            )));
        }
        block.value.clone_from(&data.values);
    }
    Ok(())
}

impl Checkpoint {
    pub fn capture(state: &TrainState) -> Self {
        Self {
            kind: KIND.to_string(),
            format_version: CHECKPOINT_VERSION,
            epochs_completed: state.epochs_completed,
            qgen: blocks_of(&state.agents.qgen.store),
            guesser: blocks_of(&state.agents.guesser.store),
            stats: state.stats.clone(),
            baseline: state.tracker,
        }
    }

    /// Loads parameters into freshly built agents, checking every shape.
    pub fn restore_into(&self, agents: &mut Agents) -> Result<()> {
        restore(&mut agents.qgen.store, &self.qgen, "qgen")?;
        restore(&mut agents.guesser.store, &self.guesser, "guesser")
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(self).map_err(|e| Error::Format(e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(bytes).map_err(|e| Error::Format(e.to_string()))?;
        if ck.kind != KIND {
            return Err(Error::Format(format!("not a checkpoint (kind `{}`)", ck.kind)));
        }
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint format_version {} unsupported (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(io_at(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(io_at(path))?)
    }
}
