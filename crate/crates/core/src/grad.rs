//! Parameter registry, batch gradients and the finite-difference checker.
//!
//! Gradients are assembled from closed-form per-layer vector-Jacobian products
//! (see [`SoftTree::backward`](crate::soft_tree::SoftTree::backward) and the
//! model's bag backward pass); there is no generic tape.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Bag;
use crate::error::{Error, Result};
use crate::ert::{CompleteTree, TreeEnsemble};
use crate::model::{bce, ModelConfig, ModelGrads, SteMilModel, PROB_CLAMP};

/// Parameter groups, in registry order.
pub const GROUPS: [&str; 9] = ["b", "log_omega", "log_tau", "V", "V_k", "V_q", "g", "w_c", "c0"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    /// Trailing component of the name, e.g. `V_k` for `attention.V_k`.
    pub fn group(&self) -> &str {
        self.name.rsplit('.').next().unwrap_or(&self.name)
    }
}

/// Ordered registry of named tensors. Used both for parameters and for
/// gradients (same names and shapes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSet {
    pub tensors: Vec<NamedTensor>,
}

pub type ParameterSet = TensorSet;
pub type GradientSet = TensorSet;

impl TensorSet {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![0.0; t.data.len()],
                })
                .collect(),
        }
    }

    /// Names and shapes agree tensor by tensor.
    pub fn congruent(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.data.len() == b.data.len())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.tensors.iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
            Some(t) => Err(Error::NonFinite { tensor: t.name.clone() }),
            None => Ok(()),
        }
    }
}

impl SteMilModel {
    /// Visit every trainable tensor in registry order.
    pub fn visit_tensors(&self, mut f: impl FnMut(String, Vec<usize>, &[f64])) {
        let e = self.embedding_dim();
        for (t, tree) in self.trees.iter().enumerate() {
            f(format!("tree{t}.b"), vec![tree.bias.len()], &tree.bias);
            f(
                format!("tree{t}.log_omega"),
                vec![1],
                std::slice::from_ref(&tree.log_omega),
            );
            f(format!("tree{t}.log_tau"), vec![1], std::slice::from_ref(&tree.log_tau));
            f(format!("tree{t}.V"), vec![e, tree.leaves()], &tree.values);
        }
        let att = &self.attention;
        f("attention.V_k".into(), vec![att.attention_dim, e], &att.key);
        f(
            "attention.V_q".into(),
            vec![att.attention_dim, att.template_dim()],
            &att.query,
        );
        if self.config.train_query {
            f("attention.g".into(), vec![att.template_dim()], &att.template);
        }
        f("head.w_c".into(), vec![e], &self.head.weights);
        f("head.c0".into(), vec![1], std::slice::from_ref(&self.head.bias));
    }

    /// Mutable access to a trainable tensor by registry name.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        if let Some(rest) = name.strip_prefix("tree") {
            let (idx, field) = rest.split_once('.')?;
            let tree = self.trees.get_mut(idx.parse::<usize>().ok()?)?;
            return match field {
                "b" => Some(&mut tree.bias),
                "log_omega" => Some(std::slice::from_mut(&mut tree.log_omega)),
                "log_tau" => Some(std::slice::from_mut(&mut tree.log_tau)),
                "V" => Some(&mut tree.values),
                _ => None,
            };
        }
        match name {
            "attention.V_k" => Some(&mut self.attention.key),
            "attention.V_q" => Some(&mut self.attention.query),
            "attention.g" if self.config.train_query => Some(&mut self.attention.template),
            "head.w_c" => Some(&mut self.head.weights),
            "head.c0" => Some(std::slice::from_mut(&mut self.head.bias)),
            _ => None,
        }
    }

    pub fn parameters(&self) -> ParameterSet {
        let mut tensors = Vec::new();
        self.visit_tensors(|name, shape, data| {
            tensors.push(NamedTensor {
                name,
                shape,
                data: data.to_vec(),
            })
        });
        TensorSet { tensors }
    }

    /// Overwrite every trainable tensor from `params` (must be congruent).
    pub fn load_parameters(&mut self, params: &ParameterSet) -> Result<()> {
        if !self.parameters().congruent(params) {
            return Err(Error::InvalidArgument(
                "parameter set does not match the model's tensor layout".into(),
            ));
        }
        for t in &params.tensors {
            let dst = self.tensor_mut(&t.name).expect("congruent layout");
            dst.copy_from_slice(&t.data);
        }
        Ok(())
    }

    fn gradient_set(&self, grads: &ModelGrads) -> GradientSet {
        let mut tensors = Vec::new();
        let e = self.embedding_dim();
        for (t, (tree, g)) in self.trees.iter().zip(&grads.trees).enumerate() {
            tensors.push(NamedTensor {
                name: format!("tree{t}.b"),
                shape: vec![g.bias.len()],
                data: g.bias.clone(),
            });
            tensors.push(NamedTensor {
                name: format!("tree{t}.log_omega"),
                shape: vec![1],
                data: vec![g.log_omega],
            });
            tensors.push(NamedTensor {
                name: format!("tree{t}.log_tau"),
                shape: vec![1],
                data: vec![g.log_tau],
            });
            tensors.push(NamedTensor {
                name: format!("tree{t}.V"),
                shape: vec![e, tree.leaves()],
                data: g.values.clone(),
            });
        }
        let att = &self.attention;
        tensors.push(NamedTensor {
            name: "attention.V_k".into(),
            shape: vec![att.attention_dim, e],
            data: grads.key.clone(),
        });
        tensors.push(NamedTensor {
            name: "attention.V_q".into(),
            shape: vec![att.attention_dim, att.template_dim()],
            data: grads.query.clone(),
        });
        if self.config.train_query {
            tensors.push(NamedTensor {
                name: "attention.g".into(),
                shape: vec![att.template_dim()],
                data: grads.template.clone(),
            });
        }
        tensors.push(NamedTensor {
            name: "head.w_c".into(),
            shape: vec![e],
            data: grads.head_weights.clone(),
        });
        tensors.push(NamedTensor {
            name: "head.c0".into(),
            shape: vec![1],
            data: vec![grads.head_bias],
        });
        TensorSet { tensors }
    }
}

/// Deliberate gradient corruption, used to confirm the checker catches bugs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Fault {
    #[default]
    None,
    /// Negate the sigmoid-layer Jacobian inside every tree.
    FlipSigmoidJacobian,
}

/// Mean bag loss over `bags`.
pub fn batch_loss(model: &SteMilModel, bags: &[&Bag]) -> f64 {
    let total: f64 = bags
        .iter()
        .map(|b| bce(model.bag_trace(&b.instances).probability, b.label))
        .sum();
    total / bags.len() as f64
}

/// Mean bag loss and its gradient with respect to every registered tensor.
pub fn loss_and_gradient(model: &SteMilModel, bags: &[&Bag]) -> Result<(f64, GradientSet)> {
    loss_and_gradient_with_fault(model, bags, Fault::None)
}

pub fn loss_and_gradient_with_fault(model: &SteMilModel, bags: &[&Bag], fault: Fault) -> Result<(f64, GradientSet)> {
    if bags.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let scale = 1.0 / bags.len() as f64;
    let sigmoid_sign = match fault {
        Fault::None => 1.0,
        Fault::FlipSigmoidJacobian => -1.0,
    };
    // Per-bag work in parallel, reduced in bag order for determinism.
    let per_bag: Vec<(f64, ModelGrads)> = bags
        .par_iter()
        .map(|bag| {
            let trace = model.bag_trace(&bag.instances);
            let p = trace.probability;
            let loss = bce(p, bag.label);
            let d_logit = if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                (p - f64::from(bag.label)) * scale
            } else {
                0.0
            };
            let mut grads = ModelGrads::zeros(model);
            model.backward_bag(&bag.instances, &trace, d_logit, &mut grads, sigmoid_sign);
            (loss, grads)
        })
        .collect();

    let mut total = 0.0;
    let mut acc = ModelGrads::zeros(model);
    for (loss, g) in per_bag {
        total += loss;
        add_grads(&mut acc, &g);
    }
    let grads = model.gradient_set(&acc);
    grads.check_finite()?;
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite { tensor: "loss".into() });
    }
    Ok((loss, grads))
}

fn add_grads(acc: &mut ModelGrads, g: &ModelGrads) {
    fn add(a: &mut [f64], b: &[f64]) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
    for (a, b) in acc.trees.iter_mut().zip(&g.trees) {
        add(&mut a.bias, &b.bias);
        a.log_omega += b.log_omega;
        a.log_tau += b.log_tau;
        add(&mut a.values, &b.values);
    }
    add(&mut acc.key, &g.key);
    add(&mut acc.query, &g.query);
    add(&mut acc.template, &g.template);
    add(&mut acc.head_weights, &g.head_weights);
    acc.head_bias += g.head_bias;
}

/// Worst-case disagreement for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub scalars_checked: usize,
    pub max_abs_error: f64,
    /// Max of `|analytic - numeric| / max(|analytic|, |numeric|)` over scalars
    /// whose absolute error exceeds the report's `abs_floor`.
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub step: f64,
    pub abs_floor: f64,
    pub groups: Vec<GroupReport>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, rel_tol: f64) -> bool {
        self.groups.iter().all(|g| g.max_rel_error <= rel_tol)
    }

    pub fn group(&self, name: &str) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.group == name)
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "step = {:e}, abs floor = {:e}", self.step, self.abs_floor)?;
        writeln!(
            f,
            "{:<10} {:>8} {:>12} {:>12}",
            "group", "scalars", "max abs", "max rel"
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "{:<10} {:>8} {:>12.3e} {:>12.3e}",
                g.group, g.scalars_checked, g.max_abs_error, g.max_rel_error
            )?;
        }
        Ok(())
    }
}

pub const FD_ABS_FLOOR: f64 = 1e-8;
pub const FD_MAX_SCALARS: usize = 10_000;

/// Compare analytic gradients with central differences of [`batch_loss`].
///
/// Steps in `[1e-7, 1e-3]` are appropriate for double precision; larger steps
/// inflate truncation error and the report shows it.
pub fn fd_check(model: &SteMilModel, bags: &[&Bag], step: f64) -> Result<GradReport> {
    fd_check_with_fault(model, bags, step, Fault::None)
}

pub fn fd_check_with_fault(model: &SteMilModel, bags: &[&Bag], step: f64, fault: Fault) -> Result<GradReport> {
    let (_, analytic) = loss_and_gradient_with_fault(model, bags, fault)?;

    let mut targets: Vec<(usize, usize)> = analytic
        .tensors
        .iter()
        .enumerate()
        .flat_map(|(ti, t)| (0..t.data.len()).map(move |i| (ti, i)))
        .collect();
    if targets.len() > FD_MAX_SCALARS {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut picked = sample(&mut rng, targets.len(), FD_MAX_SCALARS).into_vec();
        picked.sort_unstable();
        targets = picked.into_iter().map(|k| targets[k]).collect();
    }

    let numeric: Vec<f64> = targets
        .par_iter()
        .map(|&(ti, i)| {
            let name = &analytic.tensors[ti].name;
            let mut probe = model.clone();
            let base = probe.tensor_mut(name).expect("registered")[i];
            probe.tensor_mut(name).expect("registered")[i] = base + step;
            let up = batch_loss(&probe, bags);
            probe.tensor_mut(name).expect("registered")[i] = base - step;
            let down = batch_loss(&probe, bags);
            (up - down) / (2.0 * step)
        })
        .collect();

    let mut groups: Vec<GroupReport> = GROUPS
        .iter()
        .filter(|g| analytic.tensors.iter().any(|t| t.group() == **g))
        .map(|g| GroupReport {
            group: g.to_string(),
            scalars_checked: 0,
            max_abs_error: 0.0,
            max_rel_error: 0.0,
        })
        .collect();
    for (&(ti, i), num) in targets.iter().zip(numeric) {
        let t = &analytic.tensors[ti];
        let a = t.data[i];
        let abs = (a - num).abs();
        let rel = if abs > FD_ABS_FLOOR {
            abs / a.abs().max(num.abs())
        } else {
            0.0
        };
        let g = groups.iter_mut().find(|g| g.group == t.group()).expect("known group");
        g.scalars_checked += 1;
        g.max_abs_error = g.max_abs_error.max(abs);
        g.max_rel_error = g.max_rel_error.max(rel);
    }
    Ok(GradReport {
        step,
        abs_floor: FD_ABS_FLOOR,
        groups,
    })
}

/// Small random model and two bags (one per class) used for gradient checks:
/// T = 3, h = 2, m = 6, E = 4, temperatures drawn around 1.
pub fn random_fixture(seed: u64) -> (SteMilModel, Vec<Bag>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_trees, depth, m) = (3, 2, 6);
    let trees = (0..n_trees)
        .map(|_| CompleteTree {
            depth,
            node_features: (0..3).map(|_| rng.gen_range(0..m)).collect(),
            node_thresholds: (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            leaf_probs: (0..4).map(|_| rng.gen::<f64>()).collect(),
        })
        .collect();
    let ens = TreeEnsemble {
        trees,
        feature_count: m,
        depth,
    };
    let config = ModelConfig {
        init_temperature: 0.5,
        ..Default::default()
    };
    let mut model = SteMilModel::from_ensemble(&ens, &config, &mut rng);
    for t in &mut model.trees {
        t.log_tau = rng.gen_range(-1.0..0.5);
        t.log_omega = rng.gen_range(-1.0..0.5);
    }
    let bags = (0..2)
        .map(|i| {
            let n = rng.gen_range(2..5);
            let xs = (0..n)
                .map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            Bag::new(format!("b{i}"), xs, i as u8).unwrap()
        })
        .collect();
    (model, bags)
}
