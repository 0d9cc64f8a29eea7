//! End-to-end bag classifier.
//!
//! Each instance is embedded by averaging the soft-tree outputs of the
//! ensemble. A bag's embeddings are pooled with attention
//! (`beta = softmax_i(q . k_i)`, `k_i = V_k e_i`, `q = V_q g`,
//! `a = sum_i beta_i e_i`) and a linear head maps `a` to one logit.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Bag;
use crate::error::{Error, Result};
use crate::ert::TreeEnsemble;
use crate::soft_tree::{build_routing, convert_tree, sigmoid, softmax_scaled, SoftTree, SoftTreeGrads, TreeTrace};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Attention,
    Max,
    Mean,
}

/// Key projection `V_k` (`d_att x E`), query projection `V_q` (`d_att x d_g`)
/// and query template `g` (`d_g`). Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub key: Vec<f64>,
    pub query: Vec<f64>,
    pub template: Vec<f64>,
    pub attention_dim: usize,
    pub embedding_dim: usize,
}

impl AttentionParams {
    /// `V_k, V_q ~ U(-1/sqrt(E), 1/sqrt(E))`, `g = 1`.
    pub fn init<R: Rng>(embedding_dim: usize, attention_dim: usize, template_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (embedding_dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        let key = draw(attention_dim * embedding_dim);
        let query = draw(attention_dim * template_dim);
        Self {
            key,
            query,
            template: vec![1.0; template_dim],
            attention_dim,
            embedding_dim,
        }
    }

    pub fn template_dim(&self) -> usize {
        self.template.len()
    }

    /// `q = V_q g`.
    pub fn query_vector(&self) -> Vec<f64> {
        let dg = self.template_dim();
        (0..self.attention_dim)
            .map(|r| {
                self.query[r * dg..(r + 1) * dg]
                    .iter()
                    .zip(&self.template)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `k = V_k e`.
    pub fn key_vector(&self, e: &[f64]) -> Vec<f64> {
        let de = self.embedding_dim;
        (0..self.attention_dim)
            .map(|r| self.key[r * de..(r + 1) * de].iter().zip(e).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Pooling result with everything the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub pooled: Vec<f64>,
    pub weights: Vec<f64>,
    pub query: Vec<f64>,
    pub keys: Vec<Vec<f64>>,
    /// For max pooling: the instance supplying each coordinate.
    pub argmax: Vec<usize>,
}

/// Attention pooling of `embeddings` (non-empty).
pub fn attention_pool(att: &AttentionParams, embeddings: &[Vec<f64>]) -> Pooled {
    assert!(!embeddings.is_empty(), "cannot pool an empty bag");
    let query = att.query_vector();
    let keys: Vec<Vec<f64>> = embeddings.iter().map(|e| att.key_vector(e)).collect();
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| k.iter().zip(&query).map(|(a, b)| a * b).sum())
        .collect();
    let weights = softmax_scaled(&scores, 1.0);
    let pooled = weighted_sum(embeddings, &weights);
    Pooled {
        pooled,
        weights,
        query,
        keys,
        argmax: Vec::new(),
    }
}

fn weighted_sum(embeddings: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; embeddings[0].len()];
    for (e, w) in embeddings.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(e) {
            *o += w * v;
        }
    }
    out
}

fn mean_pool(embeddings: &[Vec<f64>]) -> Pooled {
    let n = embeddings.len();
    let weights = vec![1.0 / n as f64; n];
    Pooled {
        pooled: weighted_sum(embeddings, &weights),
        weights,
        query: Vec::new(),
        keys: Vec::new(),
        argmax: Vec::new(),
    }
}

/// Coordinate-wise max. `weights[i]` is the share of coordinates instance `i` supplies.
fn max_pool(embeddings: &[Vec<f64>]) -> Pooled {
    let dim = embeddings[0].len();
    let mut argmax = vec![0usize; dim];
    let mut pooled = embeddings[0].clone();
    for (i, e) in embeddings.iter().enumerate().skip(1) {
        for d in 0..dim {
            if e[d] > pooled[d] {
                pooled[d] = e[d];
                argmax[d] = i;
            }
        }
    }
    let mut weights = vec![0.0; embeddings.len()];
    for &i in &argmax {
        weights[i] += 1.0 / dim as f64;
    }
    Pooled {
        pooled,
        weights,
        query: Vec::new(),
        keys: Vec::new(),
        argmax,
    }
}

/// Reference max-pooling rule: the bag score is the largest instance score.
pub fn max_pool_reference(scores: &[f64]) -> f64 {
    assert!(!scores.is_empty(), "empty bag");
    scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagPrediction {
    pub logit: f64,
    pub probability: f64,
    pub attention_weights: Vec<f64>,
}

/// 1 iff `probability >= threshold`; ties go to the positive class.
pub fn predict_label(pred: &BagPrediction, threshold: f64) -> u8 {
    u8::from(pred.probability >= threshold)
}

pub(crate) fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy of one clamped probability.
pub fn bce(probability: f64, label: u8) -> f64 {
    let p = clamp_probability(probability);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean binary cross-entropy over bags.
pub fn bag_loss(predictions: &[BagPrediction], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension {
            expected: predictions.len(),
            actual: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, &y)| bce(p.probability, y))
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Model hyperparameters that fix tensor shapes and initialisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub attention_dim: usize,
    pub init_temperature: f64,
    pub aggregator: Aggregator,
    pub train_query: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 4,
            attention_dim: 4,
            init_temperature: 0.1,
            aggregator: Aggregator::Attention,
            train_query: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteMilModel {
    pub trees: Vec<SoftTree>,
    pub attention: AttentionParams,
    pub head: Head,
    pub config: ModelConfig,
    pub feature_count: usize,
}

/// Forward values for one bag.
#[derive(Debug, Clone)]
pub struct BagTrace {
    /// `tree_traces[instance][tree]`.
    pub tree_traces: Vec<Vec<TreeTrace>>,
    pub embeddings: Vec<Vec<f64>>,
    pub pooled: Pooled,
    pub logit: f64,
    pub probability: f64,
}

/// Gradient buffers mirroring the trainable tensors of [`SteMilModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub trees: Vec<SoftTreeGrads>,
    pub key: Vec<f64>,
    pub query: Vec<f64>,
    pub template: Vec<f64>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
}

impl ModelGrads {
    pub fn zeros(model: &SteMilModel) -> Self {
        Self {
            trees: model.trees.iter().map(SoftTreeGrads::zeros).collect(),
            key: vec![0.0; model.attention.key.len()],
            query: vec![0.0; model.attention.query.len()],
            template: vec![0.0; model.attention.template.len()],
            head_weights: vec![0.0; model.head.weights.len()],
            head_bias: 0.0,
        }
    }
}

impl SteMilModel {
    /// Compile every tree of `ensemble` and initialise attention and head.
    pub fn from_ensemble<R: Rng>(ensemble: &TreeEnsemble, config: &ModelConfig, rng: &mut R) -> Self {
        let e = config.embedding_dim;
        let routing = Arc::new(build_routing(ensemble.depth));
        let trees = ensemble
            .trees
            .iter()
            .map(|t| {
                convert_tree(
                    t,
                    ensemble.feature_count,
                    e,
                    config.init_temperature,
                    Arc::clone(&routing),
                )
            })
            .collect();
        let attention = AttentionParams::init(e, config.attention_dim, e, rng);
        let bound = 1.0 / (e as f64).sqrt();
        let head = Head {
            weights: (0..e).map(|_| rng.gen_range(-bound..bound)).collect(),
            bias: 0.0,
        };
        Self {
            trees,
            attention,
            head,
            config: config.clone(),
            feature_count: ensemble.feature_count,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    /// Mean of the tree outputs.
    pub fn instance_embed(&self, x: &[f64]) -> Vec<f64> {
        let mut e = vec![0.0; self.embedding_dim()];
        for t in &self.trees {
            for (acc, v) in e.iter_mut().zip(t.forward(x)) {
                *acc += v;
            }
        }
        let n = self.trees.len() as f64;
        e.iter_mut().for_each(|v| *v /= n);
        e
    }

    pub fn pool(&self, embeddings: &[Vec<f64>]) -> Pooled {
        match self.config.aggregator {
            Aggregator::Attention => attention_pool(&self.attention, embeddings),
            Aggregator::Mean => mean_pool(embeddings),
            Aggregator::Max => max_pool(embeddings),
        }
    }

    pub fn bag_trace(&self, instances: &[Vec<f64>]) -> BagTrace {
        let n_trees = self.trees.len() as f64;
        let mut tree_traces = Vec::with_capacity(instances.len());
        let mut embeddings = Vec::with_capacity(instances.len());
        for x in instances {
            let traces: Vec<TreeTrace> = self.trees.iter().map(|t| t.trace(x)).collect();
            let mut e = vec![0.0; self.embedding_dim()];
            for tr in &traces {
                for (acc, v) in e.iter_mut().zip(&tr.output) {
                    *acc += v;
                }
            }
            e.iter_mut().for_each(|v| *v /= n_trees);
            tree_traces.push(traces);
            embeddings.push(e);
        }
        let pooled = self.pool(&embeddings);
        let logit = self.head.bias
            + self
                .head
                .weights
                .iter()
                .zip(&pooled.pooled)
                .map(|(w, a)| w * a)
                .sum::<f64>();
        BagTrace {
            tree_traces,
            embeddings,
            pooled,
            logit,
            probability: sigmoid(logit),
        }
    }

    pub fn bag_forward(&self, bag: &Bag) -> BagPrediction {
        self.predict_instances(&bag.instances)
    }

    pub fn predict_instances(&self, instances: &[Vec<f64>]) -> BagPrediction {
        let tr = self.bag_trace(instances);
        BagPrediction {
            logit: tr.logit,
            probability: tr.probability,
            attention_weights: tr.pooled.weights,
        }
    }

    /// Backpropagate `d_logit` through one bag, accumulating into `grads`.
    pub(crate) fn backward_bag(
        &self,
        instances: &[Vec<f64>],
        trace: &BagTrace,
        d_logit: f64,
        grads: &mut ModelGrads,
        sigmoid_sign: f64,
    ) {
        let pooled = &trace.pooled;
        grads.head_bias += d_logit;
        for (g, a) in grads.head_weights.iter_mut().zip(&pooled.pooled) {
            *g += d_logit * a;
        }
        let d_pooled: Vec<f64> = self.head.weights.iter().map(|w| w * d_logit).collect();

        let n = trace.embeddings.len();
        let dim = self.embedding_dim();
        let mut d_emb = vec![vec![0.0; dim]; n];
        match self.config.aggregator {
            Aggregator::Attention => {
                let att = &self.attention;
                let beta = &pooled.weights;
                // a = sum beta_i e_i
                let d_beta: Vec<f64> = trace
                    .embeddings
                    .iter()
                    .map(|e| e.iter().zip(&d_pooled).map(|(a, b)| a * b).sum())
                    .collect();
                for (de, &b) in d_emb.iter_mut().zip(beta) {
                    for (d, g) in de.iter_mut().zip(&d_pooled) {
                        *d += b * g;
                    }
                }
                // beta = softmax(scores)
                let mean: f64 = beta.iter().zip(&d_beta).map(|(a, b)| a * b).sum();
                let d_score: Vec<f64> = beta.iter().zip(&d_beta).map(|(b, db)| b * (db - mean)).collect();
                // score_i = q . k_i, k_i = V_k e_i
                let da = att.attention_dim;
                let mut d_query = vec![0.0; da];
                for (i, &ds) in d_score.iter().enumerate() {
                    for r in 0..da {
                        d_query[r] += ds * pooled.keys[i][r];
                        let dk = ds * pooled.query[r];
                        let row = r * dim;
                        for c in 0..dim {
                            grads.key[row + c] += dk * trace.embeddings[i][c];
                            d_emb[i][c] += dk * att.key[row + c];
                        }
                    }
                }
                // q = V_q g
                let dg = att.template_dim();
                for r in 0..da {
                    for c in 0..dg {
                        grads.query[r * dg + c] += d_query[r] * att.template[c];
                        grads.template[c] += d_query[r] * att.query[r * dg + c];
                    }
                }
            }
            Aggregator::Mean => {
                for de in d_emb.iter_mut() {
                    for (d, g) in de.iter_mut().zip(&d_pooled) {
                        *d += g / n as f64;
                    }
                }
            }
            Aggregator::Max => {
                for (c, &i) in pooled.argmax.iter().enumerate() {
                    d_emb[i][c] += d_pooled[c];
                }
            }
        }

        let n_trees = self.trees.len() as f64;
        for (i, traces) in trace.tree_traces.iter().enumerate() {
            debug_assert_eq!(instances[i].len(), self.feature_count);
            let d_out: Vec<f64> = d_emb[i].iter().map(|v| v / n_trees).collect();
            for ((tree, tr), g) in self.trees.iter().zip(traces).zip(grads.trees.iter_mut()) {
                tree.backward_with_sign(tr, &d_out, g, sigmoid_sign);
            }
        }
    }
}
