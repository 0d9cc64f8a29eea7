//! Multiple instance datasets: bags of feature vectors with binary bag labels.
//!
//! A [`MilDataset`] is the unit of training and evaluation. Instances carry no
//! labels of their own; [`replicate_labels`] produces the pseudo-supervised
//! instance table used to grow the initial forest.

mod csv_io;
mod folds;
mod synth;

pub use csv_io::{load_mil_csv, read_mil_csv, write_mil_csv};
pub use folds::{kfold_split, FoldSplit};
pub use synth::{synth_generate, PlantedBox, SynthConfig, SynthData};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A labelled bag of instances. Every instance has the dataset-wide feature count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub id: String,
    pub instances: Vec<Vec<f64>>,
    pub label: u8,
}

impl Bag {
    pub fn new(id: impl Into<String>, instances: Vec<Vec<f64>>, label: u8) -> Result<Self> {
        let id = id.into();
        if instances.is_empty() {
            return Err(invalid(format!("bag `{id}` has no instances")));
        }
        if label > 1 {
            return Err(invalid(format!("bag `{id}` has label {label}, expected 0 or 1")));
        }
        Ok(Self { id, instances, label })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Per-feature affine normalisation `(x - mean) / std`.
///
/// `std` is stored already clamped: a zero-variance feature carries `1.0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(m: usize) -> Self {
        Self {
            mean: vec![0.0; m],
            std: vec![1.0; m],
        }
    }

    /// Population mean and standard deviation over every instance of `bags`.
    pub fn fit(bags: &[Bag], m: usize) -> Self {
        let mut mean = vec![0.0; m];
        let mut count = 0usize;
        for x in bags.iter().flat_map(|b| &b.instances) {
            for (acc, v) in mean.iter_mut().zip(x) {
                *acc += v;
            }
            count += 1;
        }
        let n = count.max(1) as f64;
        mean.iter_mut().for_each(|v| *v /= n);

        let mut var = vec![0.0; m];
        for x in bags.iter().flat_map(|b| &b.instances) {
            for ((acc, v), mu) in var.iter_mut().zip(x).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (mu, sd))| (v - mu) / sd)
            .collect()
    }
}

/// A collection of bags sharing one feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilDataset {
    pub bags: Vec<Bag>,
    pub feature_count: usize,
    /// Statistics applied by the last call to [`standardize`], if any.
    pub standardization: Option<FeatureStats>,
}

impl MilDataset {
    pub fn new(bags: Vec<Bag>, feature_count: usize) -> Result<Self> {
        for bag in &bags {
            for x in &bag.instances {
                if x.len() != feature_count {
                    return Err(Error::Dimension {
                        expected: feature_count,
                        actual: x.len(),
                    });
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        tensor: format!("bag `{}` features", bag.id),
                    });
                }
            }
        }
        Ok(Self {
            bags,
            feature_count,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn instance_count(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.bags.iter().map(|b| b.label).collect()
    }

    pub fn positive_count(&self) -> usize {
        self.bags.iter().filter(|b| b.label == 1).count()
    }

    /// New dataset holding the bags at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            bags: indices.iter().map(|&i| self.bags[i].clone()).collect(),
            feature_count: self.feature_count,
            standardization: self.standardization.clone(),
        }
    }
}

/// Z-score every feature.
///
/// With `stats = None` the statistics are fitted on `dataset` itself; pass the
/// returned stats back in to transform held-out data identically.
pub fn standardize(dataset: &MilDataset, stats: Option<&FeatureStats>) -> Result<(MilDataset, FeatureStats)> {
    let m = dataset.feature_count;
    let stats = match stats {
        Some(s) if s.len() != m || s.std.len() != m => {
            return Err(Error::Dimension {
                expected: m,
                actual: s.len(),
            })
        }
        Some(s) => s.clone(),
        None => FeatureStats::fit(&dataset.bags, m),
    };
    let bags = dataset
        .bags
        .iter()
        .map(|b| Bag {
            id: b.id.clone(),
            label: b.label,
            instances: b.instances.iter().map(|x| stats.apply(x)).collect(),
        })
        .collect();
    let out = MilDataset {
        bags,
        feature_count: m,
        standardization: Some(stats.clone()),
    };
    Ok((out, stats))
}

/// Instance table where each instance inherits its bag's label.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicatedDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    /// `origin[row] = (bag index, instance index within the bag)`.
    pub origin: Vec<(usize, usize)>,
    pub feature_count: usize,
}

impl ReplicatedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn replicate_labels(dataset: &MilDataset) -> ReplicatedDataset {
    let n = dataset.instance_count();
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut origin = Vec::with_capacity(n);
    for (bi, bag) in dataset.bags.iter().enumerate() {
        for (ii, x) in bag.instances.iter().enumerate() {
            features.push(x.clone());
            labels.push(bag.label);
            origin.push((bi, ii));
        }
    }
    ReplicatedDataset {
        features,
        labels,
        origin,
        feature_count: dataset.feature_count,
    }
}
