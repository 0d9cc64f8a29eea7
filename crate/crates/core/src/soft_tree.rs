//! Differentiable three-layer form of a complete decision tree.
//!
//! Layer 1 evaluates every node predicate softly, `xi = sigmoid((W x + b) / omega)`
//! with `W` one-hot on the node's split feature and `b = -threshold`. Layer 2
//! scores every root-to-leaf path as `u = R xi + s` and selects a leaf with
//! `q = softmax(u / tau)`. Layer 3 mixes the leaf embeddings, `out = V q`.
//!
//! `R[l, j]` is `-1` when leaf `l`'s path turns left at node `j`, `+1` when it
//! turns right and `0` when it does not visit `j`; `s[l]` counts the left
//! turns. Since `1 - sigmoid(z) = sigmoid(-z)`, `u[l]` equals the sum along the
//! path of the sigmoid of each predicate taken with the path's orientation, so
//! a fully satisfied path scores `h`.

use std::sync::Arc;

use crate::ert::CompleteTree;

/// Fixed routing layer for complete trees of one depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingMatrix {
    pub depth: usize,
    /// `L x M` entries in row-major order, `L = 2^h`, `M = 2^h - 1`.
    pub entries: Vec<i8>,
    /// Left-turn count per row.
    pub offsets: Vec<u32>,
    /// Non-zero `(column, sign)` pairs per row, root first.
    paths: Vec<Vec<(usize, i8)>>,
}

impl RoutingMatrix {
    pub fn leaves(&self) -> usize {
        1 << self.depth
    }

    pub fn nodes(&self) -> usize {
        (1 << self.depth) - 1
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.entries[row * self.nodes() + col]
    }

    pub fn row(&self, row: usize) -> &[i8] {
        let m = self.nodes();
        &self.entries[row * m..(row + 1) * m]
    }

    pub fn path(&self, row: usize) -> &[(usize, i8)] {
        &self.paths[row]
    }
}

/// Build `R` and `s` for depth `h >= 1`.
///
/// Columns follow the breadth-first node order (column `k - 1` for node `k`);
/// each node splits its row span in half, the upper half turning left.
pub fn build_routing(depth: usize) -> RoutingMatrix {
    assert!(depth >= 1, "routing needs depth >= 1");
    let leaves = 1usize << depth;
    let nodes = leaves - 1;
    let mut entries = vec![0i8; leaves * nodes];

    fn fill(entries: &mut [i8], nodes: usize, start: usize, end: usize, k: usize) {
        if k > nodes {
            return;
        }
        let half = (end - start) / 2;
        for row in start..start + half {
            entries[row * nodes + k - 1] = -1;
        }
        for row in start + half..end {
            entries[row * nodes + k - 1] = 1;
        }
        fill(entries, nodes, start, start + half, 2 * k);
        fill(entries, nodes, start + half, end, 2 * k + 1);
    }
    fill(&mut entries, nodes, 0, leaves, 1);

    let mut offsets = Vec::with_capacity(leaves);
    let mut paths = Vec::with_capacity(leaves);
    for row in 0..leaves {
        let r = &entries[row * nodes..(row + 1) * nodes];
        offsets.push(r.iter().filter(|&&v| v == -1).count() as u32);
        paths.push(
            r.iter()
                .enumerate()
                .filter(|(_, &v)| v != 0)
                .map(|(j, &v)| (j, v))
                .collect(),
        );
    }
    RoutingMatrix {
        depth,
        entries,
        offsets,
        paths,
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of `scores * scale`.
pub(crate) fn softmax_scaled(scores: &[f64], scale: f64) -> Vec<f64> {
    let max = scores.iter().map(|s| s * scale).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s * scale - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Compiled tree. `b`, the two log-temperatures and `V` are trainable; the
/// node features (rows of `W`) and the routing layer are fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTree {
    pub node_features: Vec<usize>,
    pub feature_count: usize,
    pub bias: Vec<f64>,
    pub log_omega: f64,
    pub log_tau: f64,
    /// `E x L` leaf embeddings, row-major.
    pub values: Vec<f64>,
    pub embedding_dim: usize,
    pub routing: Arc<RoutingMatrix>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct TreeTrace {
    pub pre_activation: Vec<f64>,
    pub predicates: Vec<f64>,
    pub path_scores: Vec<f64>,
    pub leaf_weights: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftTreeGrads {
    pub bias: Vec<f64>,
    pub log_omega: f64,
    pub log_tau: f64,
    pub values: Vec<f64>,
}

impl SoftTreeGrads {
    pub fn zeros(tree: &SoftTree) -> Self {
        Self {
            bias: vec![0.0; tree.bias.len()],
            log_omega: 0.0,
            log_tau: 0.0,
            values: vec![0.0; tree.values.len()],
        }
    }
}

/// Compile a complete tree. Leaf `l`'s embedding is its class-1 probability
/// repeated `embedding_dim` times; both temperatures start at `init_temperature`.
pub fn convert_tree(
    tree: &CompleteTree,
    feature_count: usize,
    embedding_dim: usize,
    init_temperature: f64,
    routing: Arc<RoutingMatrix>,
) -> SoftTree {
    assert_eq!(routing.depth, tree.depth, "routing depth mismatch");
    assert!(embedding_dim >= 1 && init_temperature > 0.0);
    let leaves = tree.leaf_count();
    let mut values = vec![0.0; embedding_dim * leaves];
    for e in 0..embedding_dim {
        values[e * leaves..(e + 1) * leaves].copy_from_slice(&tree.leaf_probs);
    }
    SoftTree {
        node_features: tree.node_features.clone(),
        feature_count,
        bias: tree.node_thresholds.iter().map(|t| -t).collect(),
        log_omega: init_temperature.ln(),
        log_tau: init_temperature.ln(),
        values,
        embedding_dim,
        routing,
    }
}

impl SoftTree {
    pub fn depth(&self) -> usize {
        self.routing.depth
    }

    pub fn leaves(&self) -> usize {
        self.routing.leaves()
    }

    pub fn omega(&self) -> f64 {
        self.log_omega.exp()
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    /// Dense one-hot `W` (`M x m`).
    pub fn weight_matrix(&self) -> Vec<Vec<f64>> {
        self.node_features
            .iter()
            .map(|&f| {
                let mut row = vec![0.0; self.feature_count];
                row[f] = 1.0;
                row
            })
            .collect()
    }

    pub fn value_column(&self, leaf: usize) -> Vec<f64> {
        let l = self.leaves();
        (0..self.embedding_dim).map(|e| self.values[e * l + leaf]).collect()
    }

    pub fn set_temperatures(&mut self, omega: f64, tau: f64) {
        self.log_omega = omega.ln();
        self.log_tau = tau.ln();
    }

    /// Layer-2 scores `u = R xi + s`.
    pub fn path_scores(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).path_scores
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).output
    }

    pub fn trace(&self, x: &[f64]) -> TreeTrace {
        let omega = self.omega();
        let pre_activation: Vec<f64> = self
            .node_features
            .iter()
            .zip(&self.bias)
            .map(|(&f, b)| (x[f] + b) / omega)
            .collect();
        let predicates: Vec<f64> = pre_activation.iter().map(|&z| sigmoid(z)).collect();

        let routing = &*self.routing;
        let path_scores: Vec<f64> = (0..routing.leaves())
            .map(|l| {
                routing
                    .path(l)
                    .iter()
                    .map(|&(j, sign)| f64::from(sign) * predicates[j])
                    .sum::<f64>()
                    + f64::from(routing.offsets[l])
            })
            .collect();
        let leaf_weights = softmax_scaled(&path_scores, 1.0 / self.tau());

        let leaves = routing.leaves();
        let output = (0..self.embedding_dim)
            .map(|e| {
                self.values[e * leaves..(e + 1) * leaves]
                    .iter()
                    .zip(&leaf_weights)
                    .map(|(v, q)| v * q)
                    .sum()
            })
            .collect();
        TreeTrace {
            pre_activation,
            predicates,
            path_scores,
            leaf_weights,
            output,
        }
    }

    /// Accumulate into `grads` the gradient of a scalar whose gradient with
    /// respect to this tree's output is `d_out`.
    pub fn backward(&self, trace: &TreeTrace, d_out: &[f64], grads: &mut SoftTreeGrads) {
        self.backward_with_sign(trace, d_out, grads, 1.0);
    }

    /// `sigmoid_sign` multiplies the sigmoid Jacobian; anything but `1.0` is a
    /// deliberately wrong gradient used to test the gradient checker.
    pub(crate) fn backward_with_sign(
        &self,
        trace: &TreeTrace,
        d_out: &[f64],
        grads: &mut SoftTreeGrads,
        sigmoid_sign: f64,
    ) {
        let leaves = self.leaves();
        let q = &trace.leaf_weights;

        // out = V q
        let mut d_q = vec![0.0; leaves];
        for (e, &g) in d_out.iter().enumerate() {
            let row = e * leaves;
            for l in 0..leaves {
                grads.values[row + l] += g * q[l];
                d_q[l] += g * self.values[row + l];
            }
        }

        // q = softmax(v), v = u / tau
        let inv_tau = 1.0 / self.tau();
        let mean: f64 = q.iter().zip(&d_q).map(|(a, b)| a * b).sum();
        let d_v: Vec<f64> = q.iter().zip(&d_q).map(|(qi, dq)| qi * (dq - mean)).collect();
        grads.log_tau -= d_v
            .iter()
            .zip(&trace.path_scores)
            .map(|(dv, u)| dv * u * inv_tau)
            .sum::<f64>();

        // u = R xi + s
        let mut d_xi = vec![0.0; self.bias.len()];
        for (l, dv) in d_v.iter().enumerate() {
            let d_u = dv * inv_tau;
            for &(j, sign) in self.routing.path(l) {
                d_xi[j] += f64::from(sign) * d_u;
            }
        }

        // xi = sigmoid(z), z = (x_f + b) / omega
        let inv_omega = 1.0 / self.omega();
        for (j, dx) in d_xi.iter().enumerate() {
            let xi = trace.predicates[j];
            let slope = xi * (1.0 - xi);
            if slope == 0.0 {
                continue;
            }
            let d_z = sigmoid_sign * dx * slope;
            grads.bias[j] += d_z * inv_omega;
            grads.log_omega -= d_z * trace.pre_activation[j];
        }
    }
}

/// Index and value of the largest path score.
pub fn max_path_score(tree: &SoftTree, x: &[f64]) -> (usize, f64) {
    tree.path_scores(x).into_iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |best, (l, u)| if u > best.1 { (l, u) } else { best },
    )
}
