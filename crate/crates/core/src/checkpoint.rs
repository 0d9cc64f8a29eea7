//! Single-file JSON checkpoints.
//!
//! Layout (format version 1):
//!
//! ```text
//! {
//!   "version": 1,
//!   "config": { TrainConfig },
//!   "feature_count": m,
//!   "ensemble": { "trees": [...], "feature_count": m, "depth": h },
//!   "standardization": null | { "mean": [...], "std": [...] },
//!   "parameters": { "tensors": [ { "name", "shape", "data" }, ... ] },
//!   "train_state": { "epoch", "shuffle_rng", "adam" },
//!   "loss_history": [...]
//! }
//! ```
//!
//! The compiled network is rebuilt from `ensemble` and then overwritten with
//! `parameters`. Floats are written in shortest round-trip form, so a
//! save/load/save cycle is byte-identical.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureStats, MilDataset};
use crate::error::{Error, Result};
use crate::ert::TreeEnsemble;
use crate::grad::ParameterSet;
use crate::model::SteMilModel;
use crate::train::{TrainConfig, TrainState, TrainedModel, Trainer};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub feature_count: usize,
    pub ensemble: TreeEnsemble,
    pub standardization: Option<FeatureStats>,
    pub parameters: ParameterSet,
    pub train_state: TrainState,
    pub loss_history: Vec<f64>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: trainer.config.clone(),
            feature_count: trainer.trained.model.feature_count,
            ensemble: trainer.trained.ensemble.clone(),
            standardization: trainer.trained.stats.clone(),
            parameters: trainer.trained.model.parameters(),
            train_state: trainer.state.clone(),
            loss_history: trainer.loss_history.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        if probe.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: probe.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ckpt: Self = serde_json::from_str(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    fn validate(&self) -> Result<()> {
        let corrupt = |m: String| Error::CorruptCheckpoint(m);
        if self.ensemble.feature_count != self.feature_count {
            return Err(corrupt("ensemble feature count disagrees with checkpoint".into()));
        }
        if self.ensemble.trees.len() != self.config.trees {
            return Err(corrupt("tree count disagrees with config".into()));
        }
        for t in &self.ensemble.trees {
            if t.depth != self.ensemble.depth {
                return Err(corrupt("trees have inconsistent depth".into()));
            }
            t.validate(self.feature_count).map_err(|e| corrupt(e.to_string()))?;
        }
        if let Some(s) = &self.standardization {
            if s.mean.len() != self.feature_count || s.std.len() != self.feature_count {
                return Err(corrupt("standardization length disagrees with feature count".into()));
            }
        }
        self.config.validate().map_err(|e| corrupt(e.to_string()))?;
        Ok(())
    }

    /// Rebuild the trained model.
    pub fn trained_model(&self) -> Result<TrainedModel> {
        // Random initial values are immediately overwritten by `parameters`.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = SteMilModel::from_ensemble(&self.ensemble, &self.config.model_config(), &mut rng);
        model
            .load_parameters(&self.parameters)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        Ok(TrainedModel {
            model,
            ensemble: self.ensemble.clone(),
            stats: self.standardization.clone(),
        })
    }

    /// Continue training on `dataset` (the same raw data the run started with).
    pub fn into_trainer(self, dataset: &MilDataset) -> Result<Trainer> {
        let trained = self.trained_model()?;
        Trainer::resume(dataset, self.config, trained, self.train_state, self.loss_history)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

pub fn save_checkpoint(trainer: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_trainer(trainer).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    Checkpoint::load(path)?.trained_model()
}
