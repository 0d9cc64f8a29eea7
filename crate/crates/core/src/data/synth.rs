use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Bag, MilDataset};
use crate::error::{invalid, Result};

/// Axis-aligned region of feature space whose instances are positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBox {
    pub features: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
}

impl PlantedBox {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.features.iter().all(|&f| x[f] >= self.lo && x[f] <= self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_bags: usize,
    pub min_bag_size: usize,
    pub max_bag_size: usize,
    pub feature_count: usize,
    pub positive_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_bags: 60,
            min_bag_size: 3,
            max_bag_size: 8,
            feature_count: 10,
            positive_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub dataset: MilDataset,
    pub concept: PlantedBox,
    /// Planted instance labels, parallel to `dataset.bags[i].instances`.
    pub instance_labels: Vec<Vec<u8>>,
}

/// Planted-box MIL generator.
///
/// Background instances are uniform on `[0,1]^m` outside the box; positive
/// instances are uniform inside it. A bag is positive iff it received at least
/// one planted positive.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthData> {
    let SynthConfig {
        n_bags,
        min_bag_size,
        max_bag_size,
        feature_count: m,
        positive_fraction,
        seed,
    } = *config;
    if n_bags == 0 {
        return Err(invalid("n_bags must be positive"));
    }
    if min_bag_size == 0 || min_bag_size > max_bag_size {
        return Err(invalid(format!(
            "bag size range ({min_bag_size}, {max_bag_size}) is invalid"
        )));
    }
    if m == 0 {
        return Err(invalid("feature count must be positive"));
    }
    if !(positive_fraction > 0.0 && positive_fraction < 1.0) {
        return Err(invalid(format!(
            "positive_fraction must lie in (0, 1), got {positive_fraction}"
        )));
    }

    let concept = PlantedBox {
        features: (0..m.min(2)).collect(),
        lo: 0.6,
        hi: 1.0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = ((n_bags as f64 * positive_fraction).round() as usize)
        .clamp(usize::from(n_bags > 1), n_bags.saturating_sub(1).max(1));
    let mut bag_is_positive: Vec<bool> = (0..n_bags).map(|i| i < n_pos).collect();
    bag_is_positive.shuffle(&mut rng);

    let mut bags = Vec::with_capacity(n_bags);
    let mut instance_labels = Vec::with_capacity(n_bags);
    for (i, &positive) in bag_is_positive.iter().enumerate() {
        let size = rng.gen_range(min_bag_size..=max_bag_size);
        let planted = if positive {
            1 + rng.gen_range(0..=(size - 1) / 4)
        } else {
            0
        };
        let mut labels: Vec<u8> = (0..size).map(|j| u8::from(j < planted)).collect();
        labels.shuffle(&mut rng);
        let instances: Vec<Vec<f64>> = labels
            .iter()
            .map(|&y| {
                if y == 1 {
                    let mut x: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
                    for &f in &concept.features {
                        x[f] = rng.gen_range(concept.lo..concept.hi);
                    }
                    x
                } else {
                    loop {
                        let x: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
                        if !concept.contains(&x) {
                            break x;
                        }
                    }
                }
            })
            .collect();
        let label = u8::from(labels.contains(&1));
        bags.push(Bag::new(format!("s{i}"), instances, label)?);
        instance_labels.push(labels);
    }

    Ok(SynthData {
        dataset: MilDataset::new(bags, m)?,
        concept,
        instance_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_mil_csv;

    #[test]
    fn labels_follow_existential_rule() {
        let data = synth_generate(&SynthConfig {
            n_bags: 200,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        for (bag, labels) in data.dataset.bags.iter().zip(&data.instance_labels) {
            // brute-force rule over the box membership of every instance
            let any_in_box = bag.instances.iter().any(|x| data.concept.contains(x));
            assert_eq!(bag.label == 1, any_in_box);
            assert_eq!(bag.label, *labels.iter().max().unwrap());
            for (x, &y) in bag.instances.iter().zip(labels) {
                assert_eq!(data.concept.contains(x), y == 1);
            }
        }
        let pos = data.dataset.positive_count();
        assert_eq!(pos, 100);
    }

    #[test]
    fn bag_without_planted_positive_is_negative() {
        let data = synth_generate(&SynthConfig::default()).unwrap();
        let bag = data
            .instance_labels
            .iter()
            .position(|l| l.iter().all(|&y| y == 0))
            .unwrap();
        assert_eq!(data.dataset.bags[bag].label, 0);
    }

    #[test]
    fn sizes_within_range() {
        let cfg = SynthConfig {
            min_bag_size: 2,
            max_bag_size: 4,
            ..Default::default()
        };
        let data = synth_generate(&cfg).unwrap();
        assert!(data.dataset.bags.iter().all(|b| (2..=4).contains(&b.len())));
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig {
            seed: 7,
            ..Default::default()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_mil_csv(&synth_generate(&cfg).unwrap().dataset, &mut a).unwrap();
        write_mil_csv(&synth_generate(&cfg).unwrap().dataset, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argument_errors() {
        let bad = [
            SynthConfig {
                min_bag_size: 0,
                ..Default::default()
            },
            SynthConfig {
                min_bag_size: 5,
                max_bag_size: 4,
                ..Default::default()
            },
            SynthConfig {
                positive_fraction: 0.0,
                ..Default::default()
            },
            SynthConfig {
                positive_fraction: 1.0,
                ..Default::default()
            },
            SynthConfig {
                feature_count: 0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(synth_generate(&cfg).is_err(), "{cfg:?}");
        }
    }
}
