//! Soft tree ensembles for multiple instance learning.
//!
//! The pipeline grows extremely randomized trees on instances that inherit
//! their bag's label, compiles each tree into a differentiable three-layer
//! network, pools the per-instance ensemble embeddings of a bag with
//! attention, and trains everything end to end on the bag loss.
//!
//! Module map:
//! - [`data`]: datasets, CSV I/O, standardization, synthetic data, folds
//! - [`ert`]: randomized tree induction and complete-tree materialization
//! - [`soft_tree`]: routing matrix, tree compilation, soft forward/backward
//! - [`model`]: instance embedding, attention pooling, bag loss
//! - [`grad`], [`optim`]: parameter registry, gradients, gradient checking, optimizers
//! - [`train`], [`cv`], [`checkpoint`]: training loop, evaluation, persistence

// Dense linear algebra below indexes several arrays with one loop variable.
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod cv;
pub mod data;
pub mod error;
pub mod ert;
pub mod grad;
pub mod model;
pub mod optim;
pub mod soft_tree;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use cv::{cross_validate, CvResult};
pub use data::{Bag, MilDataset};
pub use error::{Error, Result};
pub use model::{BagPrediction, SteMilModel};
pub use train::{train, TrainConfig, TrainedModel, Trainer};
