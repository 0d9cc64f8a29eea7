use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MilDataset;
use crate::error::{invalid, Result};

/// Bag-level k-fold partition. `assignments[bag] = fold`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldSplit {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Partition bags into `k` folds whose sizes differ by at most one.
///
/// Bags are shuffled (per class when `stratified`) and dealt round-robin, so a
/// stratified split also keeps every class's per-fold count within one of
/// the others.
pub fn kfold_split(dataset: &MilDataset, k: usize, seed: u64, stratified: bool) -> Result<FoldSplit> {
    let n = dataset.len();
    if k < 2 {
        return Err(invalid(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(invalid(format!("k = {k} exceeds the number of bags ({n})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let order: Vec<usize> = if stratified {
        let mut neg: Vec<usize> = (0..n).filter(|&i| dataset.bags[i].label == 0).collect();
        let mut pos: Vec<usize> = (0..n).filter(|&i| dataset.bags[i].label == 1).collect();
        neg.shuffle(&mut rng);
        pos.shuffle(&mut rng);
        neg.into_iter().chain(pos).collect()
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all
    };

    let mut assignments = vec![0; n];
    for (pos, &bag) in order.iter().enumerate() {
        assignments[bag] = pos % k;
    }
    Ok(FoldSplit { k, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Bag;
    use proptest::prelude::*;

    fn dataset(labels: &[u8]) -> MilDataset {
        let bags = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| Bag::new(format!("b{i}"), vec![vec![i as f64]], y).unwrap())
            .collect();
        MilDataset::new(bags, 1).unwrap()
    }

    #[test]
    fn ten_bags_five_folds() {
        let d = dataset(&[0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        for stratified in [false, true] {
            let s = kfold_split(&d, 5, 3, stratified).unwrap();
            assert_eq!(s.fold_sizes(), vec![2; 5]);
        }
    }

    #[test]
    fn ninety_two_bags() {
        let labels: Vec<u8> = (0..92).map(|i| u8::from(i < 47)).collect();
        let d = dataset(&labels);
        let mut sizes = kfold_split(&d, 5, 0, true).unwrap().fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![18, 18, 18, 19, 19]);
    }

    #[test]
    fn deterministic() {
        let labels: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
        let d = dataset(&labels);
        assert_eq!(
            kfold_split(&d, 4, 9, true).unwrap(),
            kfold_split(&d, 4, 9, true).unwrap()
        );
    }

    #[test]
    fn rejects_bad_k() {
        let d = dataset(&[0, 1, 0]);
        assert!(kfold_split(&d, 4, 0, false).is_err());
        assert!(kfold_split(&d, 1, 0, false).is_err());
    }

    proptest! {
        #[test]
        fn is_balanced_partition(labels in prop::collection::vec(0u8..2, 2..80), k in 2usize..8, seed in any::<u64>(), stratified in any::<bool>()) {
            prop_assume!(k <= labels.len());
            let d = dataset(&labels);
            let s = kfold_split(&d, k, seed, stratified).unwrap();
            // each bag in exactly one fold
            let mut seen = vec![0; labels.len()];
            for f in 0..k {
                for i in s.test_indices(f) {
                    seen[i] += 1;
                }
                let mut all = s.test_indices(f);
                all.extend(s.train_indices(f));
                all.sort_unstable();
                prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            let sizes = s.fold_sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            if stratified {
                let mut pos = vec![0usize; k];
                for (i, &f) in s.assignments.iter().enumerate() {
                    pos[f] += labels[i] as usize;
                }
                prop_assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
            }
        }
    }
}
