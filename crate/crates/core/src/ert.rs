//! Extremely randomized trees grown on the replicated instance table.
//!
//! Each node draws one uniform threshold per feature inside the node's value
//! range, scores every candidate by Gini decrease and keeps the best. Grown
//! trees are then completed to a fixed depth so they can be compiled into the
//! soft representation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ReplicatedDataset;
use crate::error::{invalid, Result};

/// Threshold used for filler nodes added by [`complete_tree`]; every finite input goes left.
pub const ROUTE_LEFT_THRESHOLD: f64 = f64::MAX;

/// A tree as grown, before completion. Leaves keep their label counts.
#[derive(Debug, Clone, PartialEq)]
pub enum PartialTree {
    Leaf {
        positives: usize,
        total: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<PartialTree>,
        right: Box<PartialTree>,
    },
}

impl PartialTree {
    pub fn depth(&self) -> usize {
        match self {
            PartialTree::Leaf { .. } => 0,
            PartialTree::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Hard prediction: class-1 fraction of the reached leaf.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            PartialTree::Leaf { positives, total } => *positives as f64 / *total as f64,
            PartialTree::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    pub fn leaves(&self) -> Vec<(usize, usize)> {
        match self {
            PartialTree::Leaf { positives, total } => vec![(*positives, *total)],
            PartialTree::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }
}

/// Complete binary tree of depth `h` in breadth-first layout.
///
/// Node `k` (1-based, root = 1) lives at index `k - 1`; its children are
/// `2k` and `2k + 1`. Leaves are numbered left to right, leaf `l` being node
/// `2^h + l`. The left branch is taken when `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteTree {
    pub depth: usize,
    pub node_features: Vec<usize>,
    pub node_thresholds: Vec<f64>,
    pub leaf_probs: Vec<f64>,
}

impl CompleteTree {
    pub fn internal_count(&self) -> usize {
        (1 << self.depth) - 1
    }

    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    /// Root-to-leaf descent; returns the leaf index and its probability.
    pub fn hard_traverse(&self, x: &[f64]) -> (usize, f64) {
        let mut k = 1usize;
        for _ in 0..self.depth {
            let j = k - 1;
            k = if x[self.node_features[j]] <= self.node_thresholds[j] {
                2 * k
            } else {
                2 * k + 1
            };
        }
        let leaf = k - self.leaf_count();
        (leaf, self.leaf_probs[leaf])
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let internal = self.internal_count();
        if self.node_features.len() != internal
            || self.node_thresholds.len() != internal
            || self.leaf_probs.len() != self.leaf_count()
        {
            return Err(invalid(format!("tree of depth {} has mis-sized arrays", self.depth)));
        }
        if let Some(f) = self.node_features.iter().find(|&&f| f >= m) {
            return Err(invalid(format!("node feature {f} out of range for m = {m}")));
        }
        if self.leaf_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("leaf probability outside [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub trees: Vec<CompleteTree>,
    pub feature_count: usize,
    pub depth: usize,
}

impl TreeEnsemble {
    /// Mean hard prediction over trees.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.hard_traverse(x).1).sum();
        sum / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
}

/// Class-1 fraction over `rows`; `None` for an empty set.
pub fn leaf_probability(labels: &[u8], rows: &[usize]) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let pos = rows.iter().filter(|&&i| labels[i] == 1).count();
    Some(pos as f64 / rows.len() as f64)
}

/// One uniform threshold in `[min, max)` per feature with a non-zero range, in feature order.
pub fn draw_candidates<R: Rng>(features: &[Vec<f64>], rows: &[usize], m: usize, rng: &mut R) -> Vec<SplitCandidate> {
    let mut out = Vec::with_capacity(m);
    for f in 0..m {
        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            let v = features[i][f];
            (lo.min(v), hi.max(v))
        });
        if hi > lo {
            out.push(SplitCandidate {
                feature: f,
                threshold: rng.gen_range(lo..hi),
            });
        }
    }
    out
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

/// Gini impurity decrease of `candidate` on `rows`, with the child sizes.
pub fn gini_decrease(
    features: &[Vec<f64>],
    labels: &[u8],
    rows: &[usize],
    candidate: SplitCandidate,
) -> (f64, usize, usize) {
    let (mut n_left, mut pos_left, mut pos_total) = (0usize, 0usize, 0usize);
    for &i in rows {
        let y = usize::from(labels[i]);
        pos_total += y;
        if features[i][candidate.feature] <= candidate.threshold {
            n_left += 1;
            pos_left += y;
        }
    }
    let n = rows.len();
    let n_right = n - n_left;
    let parent = gini(pos_total, n);
    let children =
        (n_left as f64 * gini(pos_left, n_left) + n_right as f64 * gini(pos_total - pos_left, n_right)) / n as f64;
    (parent - children, n_left, n_right)
}

struct Grower<'a> {
    features: &'a [Vec<f64>],
    labels: &'a [u8],
    m: usize,
    max_depth: usize,
    min_leaf: usize,
}

impl Grower<'_> {
    fn grow(&self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> PartialTree {
        let total = rows.len();
        let positives = rows.iter().filter(|&&i| self.labels[i] == 1).count();
        let leaf = PartialTree::Leaf { positives, total };
        if depth >= self.max_depth || positives == 0 || positives == total || total < 2 * self.min_leaf {
            return leaf;
        }

        let mut best: Option<(f64, SplitCandidate)> = None;
        for cand in draw_candidates(self.features, &rows, self.m, rng) {
            let (gain, n_left, n_right) = gini_decrease(self.features, self.labels, &rows, cand);
            if n_left < self.min_leaf || n_right < self.min_leaf || n_left == 0 || n_right == 0 {
                continue;
            }
            // strict comparison: the lowest feature index wins ties
            if best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, cand));
            }
        }
        let Some((_, split)) = best else {
            return leaf;
        };

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.features[i][split.feature] <= split.threshold);
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        PartialTree::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Grow one tree of depth at most `max_depth` from `seed`.
pub fn fit_partial_tree(data: &ReplicatedDataset, max_depth: usize, min_leaf: usize, seed: u64) -> Result<PartialTree> {
    if data.is_empty() {
        return Err(invalid("cannot fit a tree on an empty dataset"));
    }
    if min_leaf == 0 {
        return Err(invalid("min_leaf must be at least 1"));
    }
    let grower = Grower {
        features: &data.features,
        labels: &data.labels,
        m: data.feature_count,
        max_depth,
        min_leaf,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(grower.grow((0..data.len()).collect(), 0, &mut rng))
}

/// Fit `n_trees` trees (tree `t` seeded with `seed + t`) and complete each to `depth`.
pub fn fit_ert(
    data: &ReplicatedDataset,
    n_trees: usize,
    depth: usize,
    min_leaf: usize,
    seed: u64,
) -> Result<TreeEnsemble> {
    if data.is_empty() {
        return Err(invalid("cannot fit trees on an empty dataset"));
    }
    if depth == 0 {
        return Err(invalid("tree depth must be at least 1"));
    }
    if n_trees == 0 {
        return Err(invalid("tree count must be at least 1"));
    }
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|t| fit_partial_tree(data, depth, min_leaf, seed.wrapping_add(t as u64)).map(|p| complete_tree(&p, depth)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TreeEnsemble {
        trees,
        feature_count: data.feature_count,
        depth,
    })
}

/// Expand premature leaves into full subtrees of filler nodes so the tree has
/// exactly `2^depth` leaves. The tree function is unchanged.
///
/// Panics if `tree` is deeper than `depth`.
pub fn complete_tree(tree: &PartialTree, depth: usize) -> CompleteTree {
    assert!(
        tree.depth() <= depth,
        "tree depth {} exceeds target depth {depth}",
        tree.depth()
    );
    let internal = (1usize << depth) - 1;
    let mut out = CompleteTree {
        depth,
        node_features: vec![0; internal],
        node_thresholds: vec![ROUTE_LEFT_THRESHOLD; internal],
        leaf_probs: vec![0.0; 1 << depth],
    };
    fill(&mut out, tree, 1, 0);
    out
}

fn fill(out: &mut CompleteTree, node: &PartialTree, k: usize, level: usize) {
    if level == out.depth {
        let p = match node {
            PartialTree::Leaf { positives, total } => *positives as f64 / *total as f64,
            PartialTree::Split { .. } => unreachable!("depth checked by caller"),
        };
        out.leaf_probs[k - (1 << out.depth)] = p;
        return;
    }
    match node {
        PartialTree::Leaf { .. } => {
            out.node_features[k - 1] = 0;
            out.node_thresholds[k - 1] = ROUTE_LEFT_THRESHOLD;
            fill(out, node, 2 * k, level + 1);
            fill(out, node, 2 * k + 1, level + 1);
        }
        PartialTree::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            out.node_features[k - 1] = *feature;
            out.node_thresholds[k - 1] = *threshold;
            fill(out, left, 2 * k, level + 1);
            fill(out, right, 2 * k + 1, level + 1);
        }
    }
}
