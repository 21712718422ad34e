//! Lossless JSON persistence of a training run.
//!
//! A checkpoint holds the full mutable state plus enough configuration echo
//! to verify compatibility at load time (featurizer identity, feature
//! dimension, vocabulary size). Field order is fixed by the struct, maps are
//! ordered, and floats serialize with shortest round-trip formatting, so
//! equal states produce byte-identical files and `save(load(f))`
//! reproduces `f` exactly.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::featurizer::FEATURIZER_ID;
use crate::keys::{KeySpace, MetaKey, OpenSetThreshold, TaskKey};
use crate::memory::MemoryBuffer;
use crate::metrics::PerfMatrix;
use crate::prompts::PromptStore;
use crate::tasks::TaskSuite;
use crate::trainer::{EpochStats, TrainConfig, TrainState};

/// Format tag of the checkpoint document.
pub const CHECKPOINT_VERSION: &str = "diana-lite/1";

/// Identity of the frozen feature encoder a checkpoint was built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizerInfo {
    pub id: String,
    pub dim: usize,
}

/// Serialized form of a full training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub config: TrainConfig,
    pub featurizer: FeaturizerInfo,
    pub vocab_size: usize,
    pub stage: usize,
    pub prompt_store: PromptStore,
    pub task_keys: Vec<TaskKey>,
    pub meta_keys: Vec<MetaKey>,
    pub tau: Option<OpenSetThreshold>,
    pub backbone: Backbone,
    pub memory: Option<MemoryBuffer>,
    pub rng: ChaCha8Rng,
    pub perf_matrix: PerfMatrix,
    pub epoch_stats: Vec<EpochStats>,
}

impl Checkpoint {
    /// Capture a training state. The buffer is included when the config asks
    /// for it.
    pub fn from_state(state: &TrainState, cfg: &TrainConfig) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            config: cfg.clone(),
            featurizer: FeaturizerInfo {
                id: FEATURIZER_ID.to_string(),
                dim: cfg.prompt.dim,
            },
            vocab_size: state.backbone.vocab_size(),
            stage: state.stage,
            prompt_store: state.prompts.clone(),
            task_keys: state.keys.task_keys.clone(),
            meta_keys: state.keys.meta_keys.clone(),
            tau: state.keys.tau,
            backbone: state.backbone.clone(),
            memory: cfg.checkpoint_memory.then(|| state.memory.clone()),
            rng: state.rng.clone(),
            perf_matrix: state.matrix.clone(),
            epoch_stats: state.epoch_stats.clone(),
        }
    }

    /// Rebuild the training state. When the buffer was not serialized, a
    /// fresh empty one is created.
    pub fn into_state(self) -> (TrainState, TrainConfig) {
        let cfg = self.config.clone();
        let memory = self
            .memory
            .unwrap_or_else(|| MemoryBuffer::new(cfg.memory_capacity, cfg.seed));
        let state = TrainState {
            prompts: self.prompt_store,
            keys: KeySpace {
                task_keys: self.task_keys,
                meta_keys: self.meta_keys,
                tau: self.tau,
            },
            backbone: self.backbone,
            memory,
            matrix: self.perf_matrix,
            rng: self.rng,
            stage: self.stage,
            epoch_stats: self.epoch_stats,
            last_routing: None,
        };
        (state, cfg)
    }

    /// Verify that a suite matches what the checkpoint was trained on.
    pub fn check_compatible(&self, suite: &TaskSuite) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {:?}",
                self.version
            )));
        }
        if self.featurizer.id != FEATURIZER_ID {
            return Err(Error::Data(format!(
                "featurizer mismatch: checkpoint {:?} vs {:?}",
                self.featurizer.id, FEATURIZER_ID
            )));
        }
        if self.featurizer.dim != self.config.prompt.dim {
            return Err(Error::Data(
                "checkpoint dimension disagrees with its own config".to_string(),
            ));
        }
        if suite.vocab.len() != self.vocab_size {
            return Err(Error::Data(format!(
                "vocabulary size mismatch: checkpoint {} vs suite {}",
                self.vocab_size,
                suite.vocab.len()
            )));
        }
        Ok(())
    }
}

/// Serialize any document as pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, to_json_bytes(checkpoint)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn save_suite(path: &Path, suite: &TaskSuite) -> Result<()> {
    std::fs::write(path, to_json_bytes(suite)?)?;
    Ok(())
}

pub fn load_suite(path: &Path) -> Result<TaskSuite> {
    let bytes = std::fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}
