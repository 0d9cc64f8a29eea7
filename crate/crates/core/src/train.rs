//! Training pipeline: replicate labels, grow the forest, compile it, then run
//! shuffled bag mini-batches through the optimizer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{replicate_labels, standardize, Bag, FeatureStats, MilDataset};
use crate::error::{Error, Result};
use crate::ert::{fit_ert, TreeEnsemble};
use crate::grad::loss_and_gradient;
use crate::model::{Aggregator, BagPrediction, ModelConfig, SteMilModel};
use crate::optim::{adam_step, sgd_step, AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Training and evaluation settings. Serialized keys are the field names
/// below (`T`, `h` and `E` keep their short names); unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Number of trees.
    #[serde(rename = "T")]
    pub trees: usize,
    /// Tree depth.
    #[serde(rename = "h")]
    pub depth: usize,
    /// Embedding length.
    #[serde(rename = "E")]
    pub embedding_dim: usize,
    pub epochs: usize,
    /// Bags per mini-batch.
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub init_temperature: f64,
    pub folds: usize,
    pub seed: u64,
    pub aggregator: Aggregator,
    pub standardize: bool,
    pub min_leaf: usize,
    /// Attention projection width; defaults to `E`.
    pub attention_dim: Option<usize>,
    pub train_query: bool,
    pub stratified: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            trees: 20,
            depth: 5,
            embedding_dim: 4,
            epochs: 2000,
            batch_size: 20,
            lr: 0.01,
            optimizer: OptimizerKind::Sgd,
            init_temperature: 0.1,
            folds: 5,
            seed: 0,
            aggregator: Aggregator::Attention,
            standardize: true,
            min_leaf: 1,
            attention_dim: None,
            train_query: true,
            stratified: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("T", self.trees),
            ("h", self.depth),
            ("E", self.embedding_dim),
            ("batch_size", self.batch_size),
            ("min_leaf", self.min_leaf),
            ("attention_dim", self.attention_dim.unwrap_or(1)),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        if self.depth > 20 {
            return Err(Error::Config(format!("`h` = {} is too deep", self.depth)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("`lr` must be positive".into()));
        }
        if !(self.init_temperature > 0.0 && self.init_temperature.is_finite()) {
            return Err(Error::Config("`init_temperature` must be positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("`folds` must be at least 2".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embedding_dim: self.embedding_dim,
            attention_dim: self.attention_dim.unwrap_or(self.embedding_dim),
            init_temperature: self.init_temperature,
            aggregator: self.aggregator,
            train_query: self.train_query,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// A model together with the preprocessing it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: SteMilModel,
    pub ensemble: TreeEnsemble,
    pub stats: Option<FeatureStats>,
}

impl TrainedModel {
    /// Predict a bag given in raw (unstandardized) features.
    pub fn predict(&self, instances: &[Vec<f64>]) -> BagPrediction {
        match &self.stats {
            Some(s) => {
                let xs: Vec<Vec<f64>> = instances.iter().map(|x| s.apply(x)).collect();
                self.model.predict_instances(&xs)
            }
            None => self.model.predict_instances(instances),
        }
    }

    pub fn predict_bag(&self, bag: &Bag) -> BagPrediction {
        self.predict(&bag.instances)
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub shuffle_rng: ChaCha8Rng,
    pub adam: Option<AdamState>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub trained: TrainedModel,
    pub state: TrainState,
    pub loss_history: Vec<f64>,
    data: MilDataset,
}

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

impl Trainer {
    /// Preprocess, grow and compile the forest, and initialise attention and head.
    pub fn new(dataset: &MilDataset, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
        }
        if config.batch_size > dataset.len() {
            return Err(Error::Config(format!(
                "batch_size {} exceeds the {} training bags",
                config.batch_size,
                dataset.len()
            )));
        }
        let (data, stats) = if config.standardize {
            let (d, s) = standardize(dataset, None)?;
            (d, Some(s))
        } else {
            (dataset.clone(), None)
        };

        let replicated = replicate_labels(&data);
        let ensemble = fit_ert(&replicated, config.trees, config.depth, config.min_leaf, config.seed)?;

        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        init_rng.set_stream(INIT_STREAM);
        let model = SteMilModel::from_ensemble(&ensemble, &config.model_config(), &mut init_rng);

        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(SHUFFLE_STREAM);
        let adam = (config.optimizer == OptimizerKind::Adam).then(|| AdamState::new(&model.parameters()));

        Ok(Self {
            config: config.clone(),
            trained: TrainedModel { model, ensemble, stats },
            state: TrainState {
                epoch: 0,
                shuffle_rng,
                adam,
            },
            loss_history: Vec::new(),
            data,
        })
    }

    /// Rebuild a trainer from saved parts. `dataset` must be the raw training
    /// data the run started from.
    pub fn resume(
        dataset: &MilDataset,
        config: TrainConfig,
        trained: TrainedModel,
        state: TrainState,
        loss_history: Vec<f64>,
    ) -> Result<Self> {
        let data = match &trained.stats {
            Some(s) => standardize(dataset, Some(s))?.0,
            None => dataset.clone(),
        };
        Ok(Self {
            config,
            trained,
            state,
            loss_history,
            data,
        })
    }

    pub fn model(&self) -> &SteMilModel {
        &self.trained.model
    }

    /// One pass over the training bags; returns the mean per-bag loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let epoch = self.state.epoch;
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut self.state.shuffle_rng);

        let mut total = 0.0;
        for (batch_idx, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let bags: Vec<&Bag> = chunk.iter().map(|&i| &self.data.bags[i]).collect();
            let (loss, grads) = loss_and_gradient(&self.trained.model, &bags).map_err(|e| match e {
                Error::NonFinite { tensor } => Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    detail: format!("non-finite gradient in `{tensor}`"),
                },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    detail: format!("loss is {loss}"),
                });
            }
            total += loss * bags.len() as f64;

            let mut params = self.trained.model.parameters();
            match &mut self.state.adam {
                Some(st) => adam_step(&mut params, &grads, st, &self.config.adam())?,
                None => sgd_step(&mut params, &grads, self.config.lr)?,
            }
            self.trained.model.load_parameters(&params)?;
        }
        let mean = total / self.data.len() as f64;
        self.loss_history.push(mean);
        self.state.epoch += 1;
        Ok(mean)
    }

    pub fn run_epochs(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            self.run_epoch()?;
        }
        Ok(())
    }

    /// Run until `config.epochs` epochs have completed.
    pub fn run_to_completion(&mut self) -> Result<()> {
        let remaining = self.config.epochs.saturating_sub(self.state.epoch);
        self.run_epochs(remaining)
    }
}

/// Train from scratch for `config.epochs` epochs.
pub fn train(dataset: &MilDataset, config: &TrainConfig) -> Result<(TrainedModel, Vec<f64>)> {
    let mut trainer = Trainer::new(dataset, config)?;
    trainer.run_to_completion()?;
    Ok((trainer.trained, trainer.loss_history))
}
