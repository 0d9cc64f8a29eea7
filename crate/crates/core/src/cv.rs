//! Bag-level k-fold cross-validation.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{kfold_split, MilDataset};
use crate::error::{invalid, Result};
use crate::model::predict_label;
use crate::train::{TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub accuracy: f64,
    pub train_bags: Vec<usize>,
    pub test_bags: Vec<usize>,
    pub final_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<FoldReport>,
    pub mean: f64,
    /// Population standard deviation of the per-fold accuracies.
    pub std: f64,
    pub config: TrainConfig,
    pub seed: u64,
    pub runtime_seconds: f64,
    pub warnings: Vec<String>,
}

impl CvResult {
    pub fn accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.accuracy).collect()
    }

    /// The metrics report written by `stemil cv --report`.
    pub fn metrics_json(&self) -> serde_json::Value {
        serde_json::json!({
            "folds": self.accuracies(),
            "mean": self.mean,
            "std": self.std,
            "config": self.config,
            "seed": self.seed,
            "runtime_seconds": self.runtime_seconds,
            "fold_seconds": self.folds.iter().map(|f| f.seconds).collect::<Vec<_>>(),
            "warnings": self.warnings,
        })
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Train on k-1 folds and score bag accuracy on the held-out fold, for every fold.
///
/// Standardization statistics and the forest are fit on each training split
/// only. Folds run in parallel; fold `i` trains with seed `config.seed + i`.
pub fn cross_validate(dataset: &MilDataset, config: &TrainConfig) -> Result<CvResult> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(invalid("cross-validation needs at least two bags"));
    }
    let start = Instant::now();
    let split = kfold_split(dataset, config.folds, config.seed, config.stratified)?;

    let outcomes: Vec<Result<(FoldReport, Option<String>)>> = (0..config.folds)
        .into_par_iter()
        .map(|fold| {
            let fold_start = Instant::now();
            let train_bags = split.train_indices(fold);
            let test_bags = split.test_indices(fold);
            let train_set = dataset.subset(&train_bags);
            let test_set = dataset.subset(&test_bags);

            let positives = train_set.positive_count();
            let warning = (positives == 0 || positives == train_set.len())
                .then(|| format!("fold {fold}: training split contains a single class"));

            let fold_config = TrainConfig {
                seed: config.seed.wrapping_add(fold as u64),
                batch_size: config.batch_size.min(train_set.len()),
                ..config.clone()
            };
            let mut trainer = Trainer::new(&train_set, &fold_config)?;
            trainer.run_to_completion()?;

            let correct = test_set
                .bags
                .iter()
                .filter(|b| predict_label(&trainer.trained.predict_bag(b), 0.5) == b.label)
                .count();
            let accuracy = correct as f64 / test_set.len() as f64;
            Ok((
                FoldReport {
                    fold,
                    accuracy,
                    train_bags,
                    test_bags,
                    final_loss: trainer.loss_history.last().copied(),
                    seconds: fold_start.elapsed().as_secs_f64(),
                },
                warning,
            ))
        })
        .collect();

    let mut folds = Vec::with_capacity(config.folds);
    let mut warnings = Vec::new();
    for outcome in outcomes {
        let (report, warning) = outcome?;
        folds.push(report);
        warnings.extend(warning);
    }
    let (mean, std) = mean_std(&folds.iter().map(|f| f.accuracy).collect::<Vec<_>>());
    Ok(CvResult {
        folds,
        mean,
        std,
        config: config.clone(),
        seed: config.seed,
        runtime_seconds: start.elapsed().as_secs_f64(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Bag, MilDataset};

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 0.5, 0.75, 0.75]);
        assert_eq!(m, 0.75);
        assert!((s - (0.125f64 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_class_dataset_is_trivially_accurate() {
        let bags = (0..10)
            .map(|i| Bag::new(format!("b{i}"), vec![vec![i as f64, 1.0], vec![0.5, -(i as f64)]], 1).unwrap())
            .collect();
        let d = MilDataset::new(bags, 2).unwrap();
        let cfg = TrainConfig {
            trees: 2,
            depth: 2,
            epochs: 40,
            batch_size: 4,
            lr: 0.5,
            folds: 5,
            ..Default::default()
        };
        let r = cross_validate(&d, &cfg).unwrap();
        assert_eq!(r.accuracies(), vec![1.0; 5]);
        assert_eq!(r.warnings.len(), 5);
    }
}
