//! Acceptance criteria A1-A6. One PASS/FAIL line per criterion; exits non-zero
//! if any fails. Every tolerance and time budget is a constant below.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stemil::checkpoint::Checkpoint;
use stemil::data::{load_mil_csv, synth_generate, SynthConfig};
use stemil::ert::{CompleteTree, ROUTE_LEFT_THRESHOLD};
use stemil::grad::{fd_check, random_fixture, FD_ABS_FLOOR, GROUPS};
use stemil::model::bce;
use stemil::soft_tree::{build_routing, convert_tree};
use stemil::train::OptimizerKind;
use stemil::{cross_validate, Bag, TrainConfig, Trainer};

const A1_BUDGET: Duration = Duration::from_secs(1);

const A2_TREES: usize = 100;
const A2_INPUTS: usize = 1000;
const A2_TEMPERATURE: f64 = 1e-4;
const A2_MARGIN: f64 = 10.0 * A2_TEMPERATURE;
const A2_OUTPUT_TOL: f64 = 1e-6;
const A2_BUDGET: Duration = Duration::from_secs(30);

const A3_SEEDS: u64 = 5;
const A3_STEP: f64 = 1e-6;
const A3_REL_TOL: f64 = 1e-4;
const A3_ABS_FLOOR: f64 = 1e-8;
const A3_BUDGET: Duration = Duration::from_secs(60);

const A4_MIN_ACCURACY: f64 = 0.90;
const A4_BUDGET: Duration = Duration::from_secs(5 * 60);

const A5_MIN_ACCURACY: f64 = 0.83;
const A5_BUDGET: Duration = Duration::from_secs(30 * 60);

const A6_BAGS: usize = 1000;
const A6_WEIGHT_SUM_TOL: f64 = 1e-9;
const A6_PERMUTATION_TOL: f64 = 1e-12;
const A6_BCE_TOL: f64 = 1e-12;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(budget: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took <= budget, || format!("took {took:.1?}, budget {budget:?}"))?;
    Ok(took)
}

fn a1_routing() -> Outcome {
    let start = Instant::now();
    for h in 1..=8usize {
        let r = build_routing(h);
        let (leaves, nodes) = (1usize << h, (1usize << h) - 1);
        ensure(r.leaves() == leaves && r.nodes() == nodes, || {
            format!("h={h}: wrong shape")
        })?;
        for l in 0..leaves {
            let row = r.row(l);
            let nonzero = row.iter().filter(|&&v| v != 0).count();
            let lefts = row.iter().filter(|&&v| v == -1).count();
            ensure(nonzero == h, || format!("h={h} row {l}: {nonzero} non-zeros"))?;
            ensure(r.offsets[l] as usize == lefts, || format!("h={h} row {l}: offset"))?;
            // Non-zeros form a root-to-leaf chain whose signs spell the leaf index.
            let mut k = 1usize;
            for _ in 0..h {
                let v = row[k - 1];
                ensure(v != 0, || format!("h={h} row {l}: path breaks at node {k}"))?;
                k = if v == -1 { 2 * k } else { 2 * k + 1 };
            }
            ensure(k - leaves == l, || {
                format!("h={h} row {l}: path ends at leaf {}", k - leaves)
            })?;
        }
        // Each node's column splits the rows that reach it in half.
        for j in 0..nodes {
            let neg = (0..leaves).filter(|&l| r.get(l, j) == -1).count();
            let pos = (0..leaves).filter(|&l| r.get(l, j) == 1).count();
            ensure(neg == pos && neg > 0, || format!("h={h} column {j}: {neg} vs {pos}"))?;
        }
    }
    let r = build_routing(2);
    ensure(r.row(0) == [-1, -1, 0] && r.row(2) == [1, 0, -1], || {
        "h=2 rows differ from reference".into()
    })?;
    ensure(r.offsets == [2, 1, 1, 0], || format!("h=2 offsets {:?}", r.offsets))?;
    let took = within(A1_BUDGET, start)?;
    Ok(format!("h=1..8 invariants, h=2 reference rows ({took:.1?})"))
}

fn random_tree(rng: &mut ChaCha8Rng) -> (CompleteTree, usize) {
    let depth = rng.gen_range(1..=5);
    let m = rng.gen_range(2..=10);
    let internal = (1 << depth) - 1;
    let mut thresholds: Vec<f64> = (0..internal).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Some filler nodes, as produced by completing a shallower tree.
    for t in thresholds.iter_mut() {
        if rng.gen_bool(0.1) {
            *t = ROUTE_LEFT_THRESHOLD;
        }
    }
    let tree = CompleteTree {
        depth,
        node_features: (0..internal).map(|_| rng.gen_range(0..m)).collect(),
        node_thresholds: thresholds,
        leaf_probs: (0..1 << depth).map(|_| rng.gen()).collect(),
    };
    (tree, m)
}

fn a2_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for t in 0..A2_TREES {
        let (tree, m) = random_tree(&mut rng);
        let mut soft = convert_tree(&tree, m, 3, 1.0, Arc::new(build_routing(tree.depth)));
        soft.set_temperatures(A2_TEMPERATURE, A2_TEMPERATURE);
        for _ in 0..A2_INPUTS {
            let x: Vec<f64> = (0..m)
                .map(|f| loop {
                    let v = rng.gen_range(-1.5..1.5);
                    let clear = tree
                        .node_features
                        .iter()
                        .zip(&tree.node_thresholds)
                        .all(|(&nf, &th)| nf != f || (v - th).abs() >= A2_MARGIN);
                    if clear {
                        break v;
                    }
                })
                .collect();
            let (leaf, _) = tree.hard_traverse(&x);
            let trace = soft.trace(&x);
            let argmax = (0..trace.leaf_weights.len())
                .max_by(|&a, &b| trace.leaf_weights[a].total_cmp(&trace.leaf_weights[b]))
                .unwrap();
            ensure(argmax == leaf, || {
                format!("tree {t}: soft leaf {argmax}, hard leaf {leaf}")
            })?;
            let err = trace
                .output
                .iter()
                .zip(soft.value_column(leaf))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(err);
            ensure(err <= A2_OUTPUT_TOL, || format!("tree {t}: output error {err:.3e}"))?;
        }
    }
    let took = within(A2_BUDGET, start)?;
    Ok(format!(
        "{A2_TREES} trees x {A2_INPUTS} inputs, argmax 100%, max |soft - leaf| {worst:.2e} ({took:.1?})"
    ))
}

fn a3_gradients() -> Outcome {
    let start = Instant::now();
    ensure(FD_ABS_FLOOR == A3_ABS_FLOOR, || {
        format!("checker floor is {FD_ABS_FLOOR:e}")
    })?;
    let (mut worst, mut worst_abs) = (0.0f64, 0.0f64);
    for seed in 0..A3_SEEDS {
        let (model, bags) = random_fixture(seed);
        let refs: Vec<&Bag> = bags.iter().collect();
        let report = fd_check(&model, &refs, A3_STEP).map_err(|e| e.to_string())?;
        for g in GROUPS {
            let r = report
                .group(g)
                .ok_or_else(|| format!("seed {seed}: group {g} missing"))?;
            ensure(r.scalars_checked > 0, || format!("seed {seed}: group {g} unchecked"))?;
            ensure(r.max_rel_error <= A3_REL_TOL, || {
                format!("seed {seed}: group {g} relative error {:.3e}", r.max_rel_error)
            })?;
            worst = worst.max(r.max_rel_error);
            worst_abs = worst_abs.max(r.max_abs_error);
        }
    }
    let took = within(A3_BUDGET, start)?;
    Ok(format!(
        "{A3_SEEDS} seeds x {} groups, max relative error {worst:.2e} (entries under the {A3_ABS_FLOOR:e} floor count as 0), max absolute error {worst_abs:.2e} ({took:.1?})",
        GROUPS.len()
    ))
}

fn a4_synthetic() -> Outcome {
    let start = Instant::now();
    let synth = synth_generate(&SynthConfig {
        n_bags: 60,
        min_bag_size: 3,
        max_bag_size: 8,
        feature_count: 10,
        positive_fraction: 0.5,
        seed: 0,
    })
    .map_err(|e| e.to_string())?;
    // Label oracle: a bag is positive iff some instance lies in the planted box.
    let in_box = |x: &[f64]| (0..2).all(|f| (0.6..=1.0).contains(&x[f]));
    for bag in &synth.dataset.bags {
        let any = bag.instances.iter().any(|x| in_box(x));
        ensure(u8::from(any) == bag.label, || {
            format!("bag {} violates the bag rule", bag.id)
        })?;
    }
    let config = TrainConfig {
        trees: 10,
        depth: 4,
        embedding_dim: 4,
        epochs: 500,
        lr: 0.1,
        optimizer: OptimizerKind::Sgd,
        folds: 5,
        seed: 0,
        ..Default::default()
    };
    let cv = cross_validate(&synth.dataset, &config).map_err(|e| e.to_string())?;
    let took = within(A4_BUDGET, start)?;
    ensure(cv.mean >= A4_MIN_ACCURACY, || {
        format!(
            "mean accuracy {:.3} < {A4_MIN_ACCURACY} (folds {:?})",
            cv.mean,
            cv.accuracies()
        )
    })?;
    Ok(format!(
        "5-fold accuracy {:.3} +- {:.3}, labels match the bag rule ({took:.1?})",
        cv.mean, cv.std
    ))
}

fn a5_musk1() -> Outcome {
    let start = Instant::now();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/musk1.csv");
    let data = load_mil_csv(&path).map_err(|e| e.to_string())?;
    ensure(
        data.len() == 92 && data.instance_count() == 476 && data.feature_count == 166,
        || "musk1.csv does not have 92 bags / 476 instances / 166 features".into(),
    )?;
    let config = TrainConfig {
        trees: 20,
        depth: 5,
        embedding_dim: 4,
        epochs: 2000,
        batch_size: 20,
        lr: 0.01,
        optimizer: OptimizerKind::Sgd,
        folds: 5,
        seed: 0,
        ..Default::default()
    };
    let cv = cross_validate(&data, &config).map_err(|e| e.to_string())?;
    let took = within(A5_BUDGET, start)?;
    ensure(cv.mean >= A5_MIN_ACCURACY, || {
        format!(
            "mean accuracy {:.4} < {A5_MIN_ACCURACY} (folds {:?}, {took:.0?})",
            cv.mean,
            cv.accuracies()
        )
    })?;
    Ok(format!("5-fold accuracy {:.3} +- {:.3} ({took:.0?})", cv.mean, cv.std))
}

fn a6_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (model, _) = random_fixture(6);
    let m = model.feature_count;
    let mut worst_sum = 0.0f64;
    let mut worst_perm = 0.0f64;
    for i in 0..A6_BAGS {
        let n = rng.gen_range(1..=12);
        let mut xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let bag = Bag::new(format!("r{i}"), xs.clone(), 0).map_err(|e| e.to_string())?;
        let pred = model.bag_forward(&bag);
        let sum: f64 = pred.attention_weights.iter().sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
        ensure(pred.attention_weights.iter().all(|&w| w >= 0.0), || {
            format!("bag {i}: negative weight")
        })?;
        xs.shuffle(&mut rng);
        let permuted = model.predict_instances(&xs);
        worst_perm = worst_perm.max((permuted.logit - pred.logit).abs());
    }
    ensure(worst_sum <= A6_WEIGHT_SUM_TOL, || {
        format!("attention sum deviates by {worst_sum:.2e}")
    })?;
    ensure(worst_perm <= A6_PERMUTATION_TOL, || {
        format!("permutation changed a logit by {worst_perm:.2e}")
    })?;

    let ln2 = std::f64::consts::LN_2;
    let bce_err = (bce(0.5, 1) - ln2).abs().max((bce(0.5, 0) - ln2).abs());
    ensure(bce_err <= A6_BCE_TOL, || format!("BCE(0.5) off by {bce_err:.2e}"))?;

    let data = synth_generate(&SynthConfig {
        n_bags: 24,
        seed: 6,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?
    .dataset;
    let config = TrainConfig {
        trees: 4,
        depth: 3,
        epochs: 10,
        batch_size: 6,
        seed: 42,
        ..Default::default()
    };
    let run = || -> Result<Trainer, String> {
        let mut t = Trainer::new(&data, &config).map_err(|e| e.to_string())?;
        t.run_to_completion().map_err(|e| e.to_string())?;
        Ok(t)
    };
    let (first, second) = (run()?, run()?);
    ensure(first.loss_history == second.loss_history, || {
        "training is not deterministic".into()
    })?;

    let text = Checkpoint::from_trainer(&first).to_json();
    let restored = Checkpoint::from_json(&text).map_err(|e| e.to_string())?;
    ensure(restored.to_json() == text, || {
        "checkpoint save/load/save is not byte-identical".into()
    })?;
    let trained = restored.trained_model().map_err(|e| e.to_string())?;
    for bag in &data.bags {
        let (a, b) = (first.trained.predict_bag(bag), trained.predict_bag(bag));
        ensure(a.logit.to_bits() == b.logit.to_bits(), || {
            format!("bag {}: restored logit differs", bag.id)
        })?;
    }
    Ok(format!(
        "weight sums {worst_sum:.1e}, permutation {worst_perm:.1e}, BCE {bce_err:.1e}, checkpoint exact, training deterministic"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("A1", a1_routing),
        ("A2", a2_oracle_equivalence),
        ("A3", a3_gradients),
        ("A4", a4_synthetic),
        ("A5", a5_musk1),
        ("A6", a6_invariants),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("{name} PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{name} FAIL  {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
