use stemil::data::{synth_generate, SynthConfig};
use stemil::{train, TrainConfig};

fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    xs.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

#[test]
fn training_loss_trends_down() {
    let data = synth_generate(&SynthConfig {
        n_bags: 60,
        seed: 11,
        ..Default::default()
    })
    .unwrap()
    .dataset;
    let config = TrainConfig {
        trees: 5,
        depth: 3,
        epochs: 200,
        ..Default::default()
    };
    let (_, history) = train(&data, &config).unwrap();
    assert_eq!(history.len(), 200);
    assert!(history.iter().all(|l| l.is_finite()));

    let ma = moving_average(&history, 20);
    assert!(
        ma.last().unwrap() < ma.first().unwrap(),
        "{:?} -> {:?}",
        ma.first(),
        ma.last()
    );
    // Sampled every 20 epochs the smoothed curve never rises.
    let sampled: Vec<f64> = ma.iter().step_by(20).copied().collect();
    assert!(sampled.windows(2).all(|w| w[1] <= w[0]), "{sampled:?}");
}

#[test]
fn same_seed_same_history() {
    let data = synth_generate(&SynthConfig {
        n_bags: 30,
        seed: 4,
        ..Default::default()
    })
    .unwrap()
    .dataset;
    let config = TrainConfig {
        trees: 3,
        depth: 3,
        epochs: 15,
        batch_size: 7,
        seed: 42,
        ..Default::default()
    };
    let (a, ha) = train(&data, &config).unwrap();
    let (b, hb) = train(&data, &config).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
}
